#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "koa/text.hpp"

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string dir;  // run directory reported by the tool
};

Run koa_cli(const std::string& args) {
  const std::string cmd = std::string(KOA_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  const auto at = r.out.rfind("run directory: ");
  if (at != std::string::npos) {
    const auto end = r.out.find('\n', at);
    r.dir = r.out.substr(at + 15, end - at - 15);
  }
  return r;
}

}  // namespace

TEST_CASE("cli: usage errors exit 2") {
  CHECK(koa_cli("frobnicate").code == 2);
  CHECK(koa_cli("synth").code == 2);  // --seed is required
  CHECK(koa_cli("train --seed 1 --cohort x.csv --k 1").code != 0);
  CHECK(koa_cli("--help").code == 0);
}

TEST_CASE("cli: synth, evaluate and a small ablation") {
  testing::TempDir dir("cli-ablate");
  const std::string out = "--out " + dir.path().string();
  const auto s = koa_cli(out + " synth --seed 3");
  REQUIRE(s.code == 0);
  const std::string cohort = " --cohort " + s.dir + "/cohort.csv --mri-embeddings " + s.dir +
                             "/mri_embeddings.csv --xray-embeddings " + s.dir + "/xray_embeddings.csv";

  const auto e = koa_cli(out + " evaluate" + cohort + " --seed 3 --trees 50 --config demo+scalars");
  REQUIRE(e.code == 0);
  const auto metrics = nlohmann::json::parse(koa::text::read_file(e.dir + "/metrics.json"));
  CHECK(metrics["leakage_violations"] == 0);

  const auto a = koa_cli(out + " ablate" + cohort + " --task jsl --seed 3 --trees 50");
  REQUIRE(a.code == 0);
  const auto tsv = koa::text::read_file(a.dir + "/ablation.tsv");
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 7);  // header and six configurations
  CHECK(fs::exists(a.dir + "/manifest.json"));

  const auto manifest = nlohmann::json::parse(koa::text::read_file(a.dir + "/manifest.json"));
  CHECK(manifest["subcommand"] == "ablate");
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["artifacts"].contains("ablation.tsv"));
}

TEST_CASE("cli: deterministic reasoning and sealed aggregation") {
  testing::TempDir dir("cli-reason");
  const std::string out = "--out " + dir.path().string();
  const auto s = koa_cli(out + " synth --seed 5 --n 120");
  REQUIRE(s.code == 0);
  const std::string cohort = " --cohort " + s.dir + "/cohort.csv --mri-embeddings " + s.dir +
                             "/mri_embeddings.csv --xray-embeddings " + s.dir + "/xray_embeddings.csv";
  const auto t = koa_cli(out + " train" + cohort + " --seed 5 --trees 40");
  REQUIRE(t.code == 0);
  CHECK(nlohmann::json::parse(koa::text::read_file(t.dir + "/model.json")).is_object());
  const std::string reason = " reason" + cohort + " --trees 40 --seed 5 --limit 12";

  const auto r1 = koa_cli(out + reason + " --agent-config A2");
  INFO(r1.out);
  REQUIRE(r1.code == 0);
  const std::string first = koa::text::read_file(r1.dir + "/reports.json");
  const auto r2 = koa_cli(out + reason + " --agent-config A2");
  REQUIRE(r2.code == 0);
  CHECK(koa::text::read_file(r2.dir + "/reports.json") == first);
  CHECK(koa_cli("--out " + dir.path().string() + "/other" + reason + " --agent-config A2").code == 0);
  CHECK(koa::text::read_file(dir.path().string() + "/other/" + fs::path(r1.dir).filename().string() +
                             "/reports.json") == first);

  // replay reproduces every artifact byte for byte
  const auto before = nlohmann::json::parse(koa::text::read_file(r1.dir + "/manifest.json"))["artifacts"];
  REQUIRE(koa_cli("replay " + r1.dir + "/manifest.json").code == 0);
  CHECK(nlohmann::json::parse(koa::text::read_file(r1.dir + "/manifest.json"))["artifacts"] == before);

  const auto pk = koa_cli(out + " packets --reports " + r1.dir + "/reports.json --raters r1,r2 --seed 5");
  REQUIRE(pk.code == 0);
  const auto packets = nlohmann::json::parse(koa::text::read_file(pk.dir + "/packets.json"));
  CHECK(packets["packets"].size() == 24);

  std::string csv = "packet_id,rater_id,completeness,consistency,accuracy,readability,approved,timestamp\n";
  for (const auto& p : packets["packets"])
    csv += p["packet_id"].get<std::string>() + "," + p["rater_id"].get<std::string>() + ",4,4,4,4,true,t\n";
  koa::text::write_file(dir / "ratings.csv", csv);
  CHECK(koa_cli(out + " aggregate --ratings " + (dir / "ratings.csv")).code == 22);
  const auto ag = koa_cli(out + " aggregate --ratings " + (dir / "ratings.csv") + " --key " + pk.dir +
                          "/sealed_key.json");
  REQUIRE(ag.code == 0);
  const auto rep = nlohmann::json::parse(koa::text::read_file(ag.dir + "/aggregate.json"));
  CHECK(rep["configs"][0]["approval_rate"] == 1.0);
  CHECK(rep["configs"][0]["quality_mean"] == 4.0);
}
