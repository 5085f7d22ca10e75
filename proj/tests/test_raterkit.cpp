#include <set>
#include <thread>

#include "doctest.h"
#include "helpers.hpp"
#include "koa/agents.hpp"
#include "koa/error.hpp"
#include "koa/raterkit.hpp"
#include "koa/text.hpp"

// After Eigen: <resolv.h> defines `_res`.
#include <httplib.h>

using namespace koa;

namespace {

EvidenceBundle bundle(int i) {
  const double y_hat = 1.0 + 0.25 * i;
  const double y = y_hat + (i % 3 - 1) * 0.4;
  DiscordanceScore s{"knee-" + std::to_string(i), y, y_hat, y - y_hat, (y - y_hat) / 0.8};
  StructuralSummary st{static_cast<double>(i % 5), 1, 0, 4.5 - 0.1 * i, {{"rad.jsw_mm", 30.0}}};
  return bundle_from_values(s.knee_id, 0.1 + 0.08 * i, s, st, Thresholds{});
}

std::vector<CaseReport> reports(SystemConfigId id, int n) {
  DeterministicBackend backend;
  std::vector<CaseReport> out;
  for (int i = 0; i < n; ++i) out.push_back(run_case(bundle(i), SystemConfig::of(id), &backend, 7));
  return out;
}

Rating rating(const std::string& packet, const std::string& rater, int c, int s, int a, int r, bool ok) {
  return Rating{packet, rater, c, s, a, r, ok, "t0"};
}

ErrorCategory category_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.category();
  }
  FAIL("no error raised");
  return ErrorCategory::Usage;
}

}  // namespace

TEST_CASE("packets: one per report and rater, blinded, seed-stable") {
  const auto rs = reports(SystemConfigId::A2, 10);
  const auto set = make_packets(rs, 42, {"r1", "r2"});
  CHECK(set.packets.size() == 20);
  CHECK(set.key.entries.size() == 20);
  std::set<std::string> ids;
  for (const auto& p : set.packets) {
    CHECK(ids.insert(p.packet_id).second);
    CHECK(blinding_violations(packet_payload(p).dump()).empty());
    CHECK(!packet_payload(p).contains("knee_id"));
  }
  CHECK(blinding_violations(packets_json(set.packets).dump()).empty());
  const auto again = make_packets(rs, 42, {"r1", "r2"});
  for (std::size_t i = 0; i < set.packets.size(); ++i) CHECK(again.packets[i].packet_id == set.packets[i].packet_id);
  const auto other = make_packets(rs, 43, {"r1", "r2"});
  CHECK(other.packets[0].packet_id != set.packets[0].packet_id);

  const auto back = packets_from_json(packets_json(set.packets));
  REQUIRE(back.size() == set.packets.size());
  CHECK(back[3].report_text == set.packets[3].report_text);
}

TEST_CASE("packets: A0 reports are excluded, duplicates and empty inputs rejected") {
  auto rs = reports(SystemConfigId::A1, 3);
  const auto a0 = reports(SystemConfigId::A0, 2);
  rs.insert(rs.end(), a0.begin(), a0.end());
  const auto set = make_packets(rs, 1, {"r1"});
  CHECK(set.packets.size() == 3);
  CHECK(set.excluded_reports.size() == 2);
  CHECK(make_packets(rs, 1, {"r1"}, PacketOptions{true}).packets.size() == 5);

  auto dup = reports(SystemConfigId::A1, 2);
  dup.push_back(dup[0]);
  CHECK(category_of([&] { make_packets(dup, 1, {"r1"}); }) == ErrorCategory::Uniqueness);
  CHECK(category_of([&] { make_packets({}, 1, {"r1"}); }) == ErrorCategory::Input);
  CHECK(category_of([&] { make_packets(rs, 1, {}); }) == ErrorCategory::Input);
  CHECK(category_of([&] { make_packets(rs, 1, {"r1", "r1"}); }) == ErrorCategory::Uniqueness);
}

TEST_CASE("packets: a leaking report is refused") {
  auto rs = reports(SystemConfigId::A1, 1);
  rs[0].transcript[0].text += " (generated by A1)";
  CHECK(category_of([&] { make_packets(rs, 1, {"r1"}); }) == ErrorCategory::Blinding);
  CHECK(blinding_violations("as in A3, not A12 or BA3").size() == 1);
}

TEST_CASE("sealed key round-trip and tamper detection") {
  testing::TempDir dir("sealed");
  const auto set = make_packets(reports(SystemConfigId::A2, 4), 5, {"r1"});
  text::write_file(dir / "key.json", to_json(set.key).dump(2));
  const auto key = load_sealed_key(dir.path() / "key.json");
  CHECK(key.checksum() == set.key.checksum());
  CHECK(key.find(set.packets[0].packet_id) != nullptr);
  auto j = to_json(set.key);
  j["entries"][0]["config"] = "A3";
  CHECK(category_of([&] { sealed_key_from_json(j); }) == ErrorCategory::Sealed);
  CHECK(category_of([&] { load_sealed_key(dir.path() / "absent.json"); }) == ErrorCategory::Sealed);
}

TEST_CASE("ratings: parsing and validation") {
  const std::string header = std::string(kRatingsHeader) + "\n";
  const auto ok = parse_ratings(header + "p1,r1,4,4,5,4,true,t\np2,r1,1,2,3,4,false,t\np1,r2,5,5,5,5,true,t\n"
                                         "p3,r1,3,3,3,3,true,t\n");
  CHECK(ok.size() == 4);
  CHECK(ok[1].approved == false);
  try {
    parse_ratings(header + "p1,r1,6,4,5,4,true,t\n");
    FAIL("expected range error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::Range);
    CHECK(std::string(e.what()).find("completeness") != std::string::npos);
  }
  CHECK(category_of([&] { parse_ratings(header + "p1,r1,4,4,5,4,true,t\np1,r1,3,3,3,3,true,t\n"); }) ==
        ErrorCategory::Uniqueness);
  CHECK(category_of([&] { parse_ratings("packet_id,rater_id\np1,r1\n"); }) == ErrorCategory::Schema);
  CHECK(category_of([&] { parse_ratings(header + "p1,r1,x,4,5,4,true,t\n"); }) == ErrorCategory::Parse);
  const std::set<std::string> known = {"p1"};
  CHECK(category_of([&] { parse_ratings(header + "p9,r1,4,4,4,4,true,t\n", &known); }) ==
        ErrorCategory::UnknownPacket);
  CHECK(parse_ratings(ratings_csv(ok)).size() == 4);

  auto [r, errs] = rating_from_json({{"packet_id", "p"}, {"rater_id", "r"}, {"completeness", 0}, {"consistency", 3}});
  CHECK(!r);
  std::set<std::string> fields;
  for (const auto& e : errs) fields.insert(e.field);
  CHECK(fields.count("completeness"));
  CHECK(fields.count("accuracy"));
  CHECK(fields.count("approved"));
}

TEST_CASE("aggregation: approval rate and quality mean by hand") {
  const auto set = make_packets(reports(SystemConfigId::A3, 100), 3, {"r1"});
  std::vector<Rating> rs;
  long total = 0;
  for (int i = 0; i < 100; ++i) {
    const int c = 1 + i % 5, s = 1 + (i / 5) % 5, a = 5 - i % 4, r = 2 + i % 3;
    total += c + s + a + r;
    rs.push_back(rating(set.packets[i].packet_id, "r1", c, s, a, r, i < 88));
  }
  const auto rep = aggregate(rs, &set.key);
  REQUIRE(rep.configs.size() == 1);
  CHECK(rep.configs[0].config == "A3");
  CHECK(rep.configs[0].approval_rate == 0.88);
  CHECK(rep.configs[0].score_total == total);
  CHECK(rep.configs[0].quality_mean == static_cast<double>(total) / 400.0);

  const auto one = aggregate({rating(set.packets[0].packet_id, "r1", 4, 4, 4, 4, true)}, &set.key);
  CHECK(one.configs[0].quality_mean == 4.0);
  CHECK(category_of([&] { aggregate(rs, nullptr); }) == ErrorCategory::Sealed);
  CHECK(category_of([&] { aggregate({rating("pk-missing", "r1", 4, 4, 4, 4, true)}, &set.key); }) ==
        ErrorCategory::UnknownPacket);
  CHECK(aggregate_table(rep).find("0.88") != std::string::npos);
}

TEST_CASE("aggregation: injected divergences on identical evidence") {
  auto a1 = reports(SystemConfigId::A1, 12);
  auto a2 = reports(SystemConfigId::A2, 12);
  const std::set<int> injected = {2, 5, 9};
  for (int i : injected) {
    a2[i].narrative_phenotype = a2[i].decision.phenotype == PhenotypeLabel::PainDominant
                                    ? PhenotypeLabel::StructureDominant
                                    : PhenotypeLabel::PainDominant;
  }
  for (int i = 0; i < 12; ++i) REQUIRE(a1[i].evidence_hash == a2[i].evidence_hash);
  std::vector<CaseReport> all = a1;
  all.insert(all.end(), a2.begin(), a2.end());
  const auto set = make_packets(all, 9, {"r1", "r2"});
  const auto rep = aggregate({}, &set.key);
  CHECK(rep.divergence_pairs == 12);
  REQUIRE(rep.divergences.size() == injected.size());
  std::set<std::string> flagged;
  for (const auto& d : rep.divergences) flagged.insert(d.knee_id);
  for (int i : injected) CHECK(flagged.count("knee-" + std::to_string(i)));
}

TEST_CASE("store: conflicts and assignment") {
  const auto set = make_packets(reports(SystemConfigId::A2, 3), 2, {"r1", "r2"});
  RaterStore store(set.packets);
  const auto mine = store.assigned("r1");
  REQUIRE(mine.size() == 3);
  const auto r = rating(mine[0].packet_id, "r1", 4, 4, 5, 4, true);
  CHECK(store.submit(r).outcome == RaterStore::Outcome::Created);
  CHECK(store.submit(r).outcome == RaterStore::Outcome::Conflict);
  CHECK(store.submit(rating(mine[0].packet_id, "r2", 4, 4, 5, 4, true)).outcome == RaterStore::Outcome::NotAssigned);
  CHECK(store.submit(rating("nope", "r1", 4, 4, 5, 4, true)).outcome == RaterStore::Outcome::UnknownPacket);
  CHECK(store.submit(rating(mine[1].packet_id, "r1", 9, 4, 5, 4, true)).outcome == RaterStore::Outcome::Invalid);
  CHECK(store.progress("r1").rated == 1);
  CHECK(store.progress("r1").assigned == 3);
}

TEST_CASE("server: rating flow over http") {
  testing::TempDir dir("server");
  const auto set = make_packets(reports(SystemConfigId::A2, 3), 2, {"r1", "r2"});
  RaterStore store(set.packets, {}, dir.path() / "ratings.csv");
  RaterServer server(store, ServerOptions{{{"r1", "tok1"}, {"r2", "tok2"}}});
  const int port = server.bind("127.0.0.1", 0);
  std::thread t([&] { server.listen(); });

  httplib::Client cli("127.0.0.1", port);
  const httplib::Headers auth = {{"Authorization", "Bearer tok1"}};
  for (int i = 0; i < 50 && !cli.Get("/api/raters/r1/progress", auth); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));

  CHECK(cli.Get("/api/raters/r1/packets")->status == 401);
  CHECK(cli.Get("/api/raters/r1/packets", {{"Authorization", "Bearer tok2"}})->status == 401);
  auto res = cli.Get("/api/raters/r1/packets", auth);
  REQUIRE(res->status == 200);
  auto list = nlohmann::json::parse(res->body);
  CHECK(list["packets"].size() == 3);
  const std::string first = list["next"];

  res = cli.Get("/api/packets/" + first, auth);
  REQUIRE(res->status == 200);
  CHECK(blinding_violations(res->body).empty());
  CHECK(cli.Get("/api/packets/pk-none", auth)->status == 404);

  nlohmann::json body = {{"packet_id", first}, {"rater_id", "r1"}, {"completeness", 4}, {"consistency", 4},
                         {"accuracy", 5},      {"readability", 4}, {"approved", true}};
  res = cli.Post("/api/ratings", auth, body.dump(), "application/json");
  CHECK(res->status == 201);
  res = cli.Post("/api/ratings", auth, body.dump(), "application/json");
  CHECK(res->status == 409);

  body["packet_id"] = list["packets"][1]["packet_id"];
  body["completeness"] = 7;
  res = cli.Post("/api/ratings", auth, body.dump(), "application/json");
  CHECK(res->status == 400);
  CHECK(nlohmann::json::parse(res->body)["errors"][0]["field"] == "completeness");
  CHECK(cli.Post("/api/ratings", auth, "{not json", "application/json")->status == 400);

  res = cli.Get("/api/raters/r1/progress", auth);
  const auto prog = nlohmann::json::parse(res->body);
  CHECK(prog["rated"] == 1);
  CHECK(prog["remaining"] == 2);
  list = nlohmann::json::parse(cli.Get("/api/raters/r1/packets", auth)->body);
  CHECK(list["next"] != first);
  for (const auto& pk : list["packets"]) {
    if (pk["rated"]) continue;
    body["packet_id"] = pk["packet_id"];
    body["completeness"] = 3;
    CHECK(cli.Post("/api/ratings", auth, body.dump(), "application/json")->status == 201);
  }
  CHECK(nlohmann::json::parse(cli.Get("/api/raters/r1/packets", auth)->body)["next"].is_null());
  CHECK(cli.Options("/api/ratings")->status == 204);

  server.stop();
  t.join();
  const auto logged = ingest_ratings(dir.path() / "ratings.csv");
  REQUIRE(logged.size() == 3);
  CHECK(logged[0].packet_id == first);
  CHECK(!logged[0].timestamp.empty());
}

TEST_CASE("server: port already in use") {
  RaterStore store({});
  RaterServer a(store);
  const int port = a.bind("127.0.0.1", 0);
  RaterServer b(store);
  CHECK(category_of([&] { b.bind("127.0.0.1", port); }) == ErrorCategory::Io);
}
