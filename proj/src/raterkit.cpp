#include "koa/raterkit.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "koa/error.hpp"
#include "koa/log.hpp"
#include "koa/rng.hpp"
#include "koa/text.hpp"

namespace koa {

nlohmann::json packet_payload(const RaterPacket& p) {
  return {{"packet_id", p.packet_id}, {"rater_id", p.rater_id}, {"evidence", p.evidence}, {"report_text", p.report_text}};
}

std::vector<std::string> blinding_violations(std::string_view bytes) {
  static const std::regex token(R"(\bA[0-4]\b)");
  std::vector<std::string> out;
  const std::string s(bytes);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), token); it != std::sregex_iterator(); ++it) {
    out.push_back(it->str());
  }
  return out;
}

const SealedEntry* SealedKey::find(std::string_view packet_id) const {
  for (const auto& e : entries) {
    if (e.packet_id == packet_id) return &e;
  }
  return nullptr;
}

namespace {

nlohmann::json entries_json(const std::vector<SealedEntry>& entries) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& e : entries) {
    a.push_back({{"packet_id", e.packet_id},
                 {"rater_id", e.rater_id},
                 {"config", e.config},
                 {"report_id", e.report_id},
                 {"knee_id", e.knee_id},
                 {"evidence_hash", e.evidence_hash},
                 {"decision_phenotype", e.decision_phenotype},
                 {"narrative_phenotype", e.narrative_phenotype ? nlohmann::json(*e.narrative_phenotype) : nlohmann::json()}});
  }
  return a;
}

// Evidence handed to raters: numbers and feature names, no identifiers.
nlohmann::json blinded_evidence(const nlohmann::json& evidence) {
  nlohmann::json e = evidence;
  e.erase("knee_id");
  e.erase("hash");
  return e;
}

}  // namespace

std::string SealedKey::checksum() const {
  return text::hex64(fnv1a64(entries_json(entries).dump() + "|" + std::to_string(blinding_seed)));
}

nlohmann::json to_json(const SealedKey& key) {
  return {{"format", "koa-sealed-key"},
          {"version", 1},
          {"blinding_seed", key.blinding_seed},
          {"entries", entries_json(key.entries)},
          {"checksum", key.checksum()}};
}

SealedKey sealed_key_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "koa-sealed-key") fail(ErrorCategory::Sealed, "not a sealed key file");
  SealedKey k;
  try {
    k.blinding_seed = j.at("blinding_seed").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) {
      SealedEntry s;
      s.packet_id = e.at("packet_id").get<std::string>();
      s.rater_id = e.at("rater_id").get<std::string>();
      s.config = e.at("config").get<std::string>();
      s.report_id = e.at("report_id").get<std::string>();
      s.knee_id = e.at("knee_id").get<std::string>();
      s.evidence_hash = e.at("evidence_hash").get<std::string>();
      s.decision_phenotype = e.at("decision_phenotype").get<std::string>();
      if (!e.at("narrative_phenotype").is_null()) s.narrative_phenotype = e.at("narrative_phenotype").get<std::string>();
      k.entries.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::Sealed, std::string("malformed sealed key: ") + e.what());
  }
  if (j.value("checksum", "") != k.checksum()) fail(ErrorCategory::Sealed, "sealed key checksum mismatch");
  return k;
}

SealedKey load_sealed_key(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = text::read_file(path.string());
  } catch (const Error&) {
    fail(ErrorCategory::Sealed, "sealed key '" + path.string() + "' is unavailable; aggregation requires it");
  }
  try {
    return sealed_key_from_json(nlohmann::json::parse(bytes));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCategory::Sealed, std::string("sealed key is not valid JSON: ") + e.what());
  }
}

PacketSet make_packets(const std::vector<CaseReport>& reports, std::uint64_t blinding_seed,
                       const std::vector<std::string>& raters, const PacketOptions& options) {
  if (reports.empty()) fail(ErrorCategory::Input, "make_packets: no reports");
  if (raters.empty()) fail(ErrorCategory::Input, "make_packets: no raters");
  std::set<std::string> seen_raters;
  for (const auto& r : raters) {
    if (r.empty() || !seen_raters.insert(r).second) fail(ErrorCategory::Uniqueness, "rater ids must be unique and non-empty");
  }
  std::set<std::string> ids;
  for (const auto& r : reports) {
    if (!ids.insert(r.report_id()).second) fail(ErrorCategory::Uniqueness, "duplicate report id " + r.report_id());
  }

  PacketSet set;
  set.key.blinding_seed = blinding_seed;
  const std::uint64_t id_seed = derive_seed(blinding_seed, "packet-id");
  std::vector<std::pair<RaterPacket, SealedEntry>> items;
  for (const auto& r : reports) {
    if (r.config == SystemConfigId::A0 && !options.include_a0) {
      log::info("report " + r.report_id() + " excluded from rating: the deterministic template is not rated");
      set.excluded_reports.push_back(r.report_id());
      continue;
    }
    for (const auto& rater : raters) {
      RaterPacket p;
      p.packet_id = "pk-" + text::hex64(mix64(id_seed ^ fnv1a64(r.report_id() + "|" + rater)));
      p.rater_id = rater;
      p.evidence = blinded_evidence(r.evidence);
      p.report_text = r.report_text();
      const auto leaks = blinding_violations(packet_payload(p).dump());
      if (!leaks.empty()) {
        fail(ErrorCategory::Blinding, "packet for report " + r.report_id() + " would expose configuration token " +
                                          leaks.front());
      }
      SealedEntry e;
      e.packet_id = p.packet_id;
      e.rater_id = rater;
      e.config = std::string(config_id_name(r.config));
      e.report_id = r.report_id();
      e.knee_id = r.knee_id;
      e.evidence_hash = r.evidence_hash;
      e.decision_phenotype = std::string(phenotype_name(r.decision.phenotype));
      if (r.narrative_phenotype) e.narrative_phenotype = std::string(phenotype_name(*r.narrative_phenotype));
      items.emplace_back(std::move(p), std::move(e));
    }
  }
  Rng rng(derive_seed(blinding_seed, "packet-order"));
  rng.shuffle(std::span(items));
  for (auto& [p, e] : items) {
    set.packets.push_back(std::move(p));
    set.key.entries.push_back(std::move(e));
  }
  return set;
}

nlohmann::json packets_json(const std::vector<RaterPacket>& packets) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : packets) a.push_back(packet_payload(p));
  return {{"format", "koa-rater-packets"}, {"version", 1}, {"packets", a}};
}

std::vector<RaterPacket> packets_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "koa-rater-packets") fail(ErrorCategory::Parse, "not a rater packet file");
  std::vector<RaterPacket> out;
  for (const auto& p : j.at("packets")) {
    out.push_back({p.at("packet_id").get<std::string>(), p.at("rater_id").get<std::string>(), p.at("evidence"),
                   p.at("report_text").get<std::string>()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ratings

namespace {

constexpr std::string_view kScoreFields[] = {"completeness", "consistency", "accuracy", "readability"};

int* score_slot(Rating& r, std::string_view f) {
  if (f == "completeness") return &r.completeness;
  if (f == "consistency") return &r.consistency;
  if (f == "accuracy") return &r.accuracy;
  return &r.readability;
}

int score_of(const Rating& r, std::string_view f) { return *score_slot(const_cast<Rating&>(r), f); }

std::optional<bool> parse_bool(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  return std::nullopt;
}

}  // namespace

std::vector<FieldError> validate_rating(const Rating& r) {
  std::vector<FieldError> errs;
  if (r.packet_id.empty()) errs.push_back({"packet_id", "required"});
  if (r.rater_id.empty()) errs.push_back({"rater_id", "required"});
  for (auto f : kScoreFields) {
    const int v = score_of(r, f);
    if (v < 1 || v > 5) errs.push_back({std::string(f), "must be an integer from 1 to 5 (got " + std::to_string(v) + ")"});
  }
  return errs;
}

std::pair<std::optional<Rating>, std::vector<FieldError>> rating_from_json(const nlohmann::json& j) {
  std::vector<FieldError> errs;
  if (!j.is_object()) return {std::nullopt, {{"body", "expected a JSON object"}}};
  Rating r;
  for (std::string_view f : {"packet_id", "rater_id"}) {
    const auto it = j.find(f);
    if (it == j.end() || !it->is_string()) {
      errs.push_back({std::string(f), "required string"});
    } else {
      (f == "packet_id" ? r.packet_id : r.rater_id) = it->get<std::string>();
    }
  }
  for (auto f : kScoreFields) {
    const auto it = j.find(f);
    if (it == j.end() || !it->is_number_integer()) {
      errs.push_back({std::string(f), "required integer from 1 to 5"});
      continue;
    }
    const auto v = it->get<long long>();
    if (v < 1 || v > 5) {
      errs.push_back({std::string(f), "must be an integer from 1 to 5 (got " + std::to_string(v) + ")"});
      continue;
    }
    *score_slot(r, f) = static_cast<int>(v);
  }
  if (const auto it = j.find("approved"); it == j.end() || !it->is_boolean()) {
    errs.push_back({"approved", "required boolean"});
  } else {
    r.approved = it->get<bool>();
  }
  if (const auto it = j.find("timestamp"); it != j.end() && it->is_string()) r.timestamp = it->get<std::string>();
  if (!errs.empty()) return {std::nullopt, errs};
  return {r, {}};
}

nlohmann::json to_json(const Rating& r) {
  return {{"packet_id", r.packet_id},     {"rater_id", r.rater_id},       {"completeness", r.completeness},
          {"consistency", r.consistency},  {"accuracy", r.accuracy},       {"readability", r.readability},
          {"approved", r.approved},        {"timestamp", r.timestamp}};
}

std::vector<Rating> parse_ratings(std::string_view csv, const std::set<std::string>* known) {
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCategory::Schema, "rating file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = text::split_fields(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[std::string(text::trim(header[i]))] = i;
  for (const auto& f : text::split_fields(kRatingsHeader)) {
    if (f != "timestamp" && !col.count(f)) fail(ErrorCategory::Schema, "rating file lacks column '" + f + "'");
  }
  std::vector<Rating> out;
  std::set<std::pair<std::string, std::string>> keys;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    const auto cells = text::split_fields(line);
    const auto cell = [&](const std::string& name) -> std::string {
      const auto it = col.find(name);
      if (it == col.end()) return {};
      if (it->second >= cells.size()) fail(ErrorCategory::Parse, "line " + std::to_string(line_no) + ": too few fields");
      return std::string(text::trim(cells[it->second]));
    };
    Rating r;
    r.packet_id = cell("packet_id");
    r.rater_id = cell("rater_id");
    for (auto f : kScoreFields) {
      const auto v = text::parse_int(cell(std::string(f)));
      if (!v) fail(ErrorCategory::Parse, "line " + std::to_string(line_no) + ": " + std::string(f) + " is not an integer");
      if (*v < 1 || *v > 5) {
        fail(ErrorCategory::Range, "line " + std::to_string(line_no) + ": " + std::string(f) + " = " +
                                       std::to_string(*v) + " is outside 1..5");
      }
      *score_slot(r, f) = static_cast<int>(*v);
    }
    const auto ap = parse_bool(cell("approved"));
    if (!ap) fail(ErrorCategory::Parse, "line " + std::to_string(line_no) + ": approved must be true or false");
    r.approved = *ap;
    r.timestamp = cell("timestamp");
    if (r.packet_id.empty() || r.rater_id.empty()) {
      fail(ErrorCategory::Parse, "line " + std::to_string(line_no) + ": packet_id and rater_id are required");
    }
    if (known && !known->count(r.packet_id)) {
      fail(ErrorCategory::UnknownPacket, "line " + std::to_string(line_no) + ": unknown packet " + r.packet_id);
    }
    if (!keys.insert({r.packet_id, r.rater_id}).second) {
      fail(ErrorCategory::Uniqueness, "line " + std::to_string(line_no) + ": duplicate rating of " + r.packet_id +
                                          " by " + r.rater_id);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Rating> ingest_ratings(const std::filesystem::path& path, const std::set<std::string>* known) {
  return parse_ratings(text::read_file(path.string()), known);
}

std::string rating_csv_line(const Rating& r) {
  return r.packet_id + "," + r.rater_id + "," + std::to_string(r.completeness) + "," + std::to_string(r.consistency) +
         "," + std::to_string(r.accuracy) + "," + std::to_string(r.readability) + "," +
         (r.approved ? "true" : "false") + "," + r.timestamp;
}

std::string ratings_csv(const std::vector<Rating>& ratings) {
  std::string out(kRatingsHeader);
  out += '\n';
  for (const auto& r : ratings) out += rating_csv_line(r) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

AggregateReport aggregate(const std::vector<Rating>& ratings, const SealedKey* key, std::string config_a,
                          std::string config_b) {
  if (!key) fail(ErrorCategory::Sealed, "aggregation requires the sealed key");
  AggregateReport rep;
  rep.divergence_a = std::move(config_a);
  rep.divergence_b = std::move(config_b);
  std::map<std::string, ConfigStats> stats;
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& r : ratings) {
    const SealedEntry* e = key->find(r.packet_id);
    if (!e) fail(ErrorCategory::UnknownPacket, "rating references unknown packet " + r.packet_id);
    if (const auto errs = validate_rating(r); !errs.empty()) {
      fail(ErrorCategory::Range, "rating of " + r.packet_id + ": " + errs.front().field + " " + errs.front().message);
    }
    if (!keys.insert({r.packet_id, r.rater_id}).second) {
      fail(ErrorCategory::Uniqueness, "duplicate rating of " + r.packet_id + " by " + r.rater_id);
    }
    auto& s = stats[e->config];
    s.config = e->config;
    ++s.ratings;
    if (r.approved) ++s.approvals;
    s.score_total += r.completeness + r.consistency + r.accuracy + r.readability;
  }
  for (auto& [name, s] : stats) {
    s.approval_rate = static_cast<double>(s.approvals) / static_cast<double>(s.ratings);
    s.quality_mean = static_cast<double>(s.score_total) / (4.0 * static_cast<double>(s.ratings));
    rep.configs.push_back(s);
  }

  // One narrative label per (config, evidence hash), taken from any packet of that report.
  std::map<std::string, std::pair<std::string, std::string>> a_side, b_side;  // hash -> (knee, label)
  for (const auto& e : key->entries) {
    auto* side = e.config == rep.divergence_a ? &a_side : e.config == rep.divergence_b ? &b_side : nullptr;
    if (!side) continue;
    side->emplace(e.evidence_hash, std::make_pair(e.knee_id, e.narrative_phenotype.value_or("none")));
  }
  for (const auto& [hash, a] : a_side) {
    const auto it = b_side.find(hash);
    if (it == b_side.end()) continue;
    ++rep.divergence_pairs;
    if (a.second != it->second.second) rep.divergences.push_back({hash, a.first, a.second, it->second.second});
  }
  return rep;
}

nlohmann::json to_json(const AggregateReport& rep) {
  nlohmann::json cfgs = nlohmann::json::array();
  for (const auto& s : rep.configs) {
    cfgs.push_back({{"config", s.config},
                    {"ratings", s.ratings},
                    {"approvals", s.approvals},
                    {"approval_rate", s.approval_rate},
                    {"quality_mean", s.quality_mean}});
  }
  nlohmann::json div = nlohmann::json::array();
  for (const auto& d : rep.divergences) {
    div.push_back({{"evidence_hash", d.evidence_hash},
                   {"knee_id", d.knee_id},
                   {rep.divergence_a, d.phenotype_a},
                   {rep.divergence_b, d.phenotype_b}});
  }
  return {{"configs", cfgs},
          {"divergence",
           {{"configs", {rep.divergence_a, rep.divergence_b}},
            {"pairs", rep.divergence_pairs},
            {"count", rep.divergences.size()},
            {"rows", div}}}};
}

std::string aggregate_table(const AggregateReport& rep) {
  std::ostringstream out;
  out << "config\tratings\tapproval_rate\tinterpretation_quality\n";
  char buf[128];
  for (const auto& s : rep.configs) {
    std::snprintf(buf, sizeof buf, "%s\t%zu\t%.2f\t%.2f\n", s.config.c_str(), s.ratings, s.approval_rate,
                  s.quality_mean);
    out << buf;
  }
  out << "\nphenotype divergence " << rep.divergence_a << " vs " << rep.divergence_b << ": " << rep.divergences.size()
      << " of " << rep.divergence_pairs << " hash-identical cases\n";
  for (const auto& d : rep.divergences) {
    out << d.knee_id << '\t' << d.evidence_hash << '\t' << d.phenotype_a << '\t' << d.phenotype_b << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Store

RaterStore::RaterStore(std::vector<RaterPacket> packets, std::vector<Rating> existing,
                       std::optional<std::filesystem::path> ratings_log)
    : packets_(std::move(packets)), log_(std::move(ratings_log)) {
  for (std::size_t i = 0; i < packets_.size(); ++i) {
    if (!index_.emplace(packets_[i].packet_id, i).second) {
      fail(ErrorCategory::Uniqueness, "duplicate packet id " + packets_[i].packet_id);
    }
  }
  for (auto& r : existing) {
    if (!index_.count(r.packet_id)) fail(ErrorCategory::UnknownPacket, "stored rating for unknown packet " + r.packet_id);
    auto key = std::make_pair(r.packet_id, r.rater_id);
    if (ratings_.emplace(key, r).second) order_.push_back(key);
  }
  if (log_ && !std::filesystem::exists(*log_)) {
    std::ofstream(*log_) << kRatingsHeader << '\n';
  }
}

std::vector<RaterPacket> RaterStore::assigned(std::string_view rater) const {
  std::vector<RaterPacket> out;
  for (const auto& p : packets_) {
    if (p.rater_id == rater) out.push_back(p);
  }
  return out;
}

std::optional<RaterPacket> RaterStore::packet(std::string_view id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return packets_[it->second];
}

bool RaterStore::rated(std::string_view packet_id, std::string_view rater) const {
  std::lock_guard lock(mutex_);
  return ratings_.count({std::string(packet_id), std::string(rater)}) > 0;
}

RaterStore::SubmitResult RaterStore::submit(const Rating& rating) {
  SubmitResult res;
  res.errors = validate_rating(rating);
  if (!res.errors.empty()) return res;
  const auto it = index_.find(rating.packet_id);
  if (it == index_.end()) {
    res.outcome = Outcome::UnknownPacket;
    return res;
  }
  if (packets_[it->second].rater_id != rating.rater_id) {
    res.outcome = Outcome::NotAssigned;
    return res;
  }
  std::lock_guard lock(mutex_);
  auto key = std::make_pair(rating.packet_id, rating.rater_id);
  if (!ratings_.emplace(key, rating).second) {
    res.outcome = Outcome::Conflict;
    return res;
  }
  order_.push_back(key);
  if (log_) std::ofstream(*log_, std::ios::app) << rating_csv_line(rating) << '\n';
  res.outcome = Outcome::Created;
  return res;
}

RaterStore::Progress RaterStore::progress(std::string_view rater) const {
  Progress p;
  std::lock_guard lock(mutex_);
  for (const auto& pk : packets_) {
    if (pk.rater_id != rater) continue;
    ++p.assigned;
    if (ratings_.count({pk.packet_id, pk.rater_id})) ++p.rated;
  }
  return p;
}

std::vector<Rating> RaterStore::ratings() const {
  std::lock_guard lock(mutex_);
  std::vector<Rating> out;
  for (const auto& k : order_) out.push_back(ratings_.at(k));
  return out;
}

}  // namespace koa
