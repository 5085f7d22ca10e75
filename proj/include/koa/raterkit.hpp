#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "koa/agents.hpp"

namespace koa {

struct RaterPacket {
  std::string packet_id;  // opaque
  std::string rater_id;
  nlohmann::json evidence;  // numeric fields only
  std::string report_text;
};

// The only serialisation handed to raters.
nlohmann::json packet_payload(const RaterPacket& packet);

// Tokens such as "A0".."A4" found in the bytes.
std::vector<std::string> blinding_violations(std::string_view bytes);

struct SealedEntry {
  std::string packet_id;
  std::string rater_id;
  std::string config;
  std::string report_id;
  std::string knee_id;
  std::string evidence_hash;
  std::string decision_phenotype;
  std::optional<std::string> narrative_phenotype;
};

struct SealedKey {
  std::uint64_t blinding_seed = 0;
  std::vector<SealedEntry> entries;

  const SealedEntry* find(std::string_view packet_id) const;
  std::string checksum() const;
};

nlohmann::json to_json(const SealedKey& key);
// Throws Sealed when the checksum does not match.
SealedKey sealed_key_from_json(const nlohmann::json& j);
SealedKey load_sealed_key(const std::filesystem::path& path);

struct PacketOptions {
  bool include_a0 = false;
};

struct PacketSet {
  std::vector<RaterPacket> packets;  // shuffled by the blinding seed
  SealedKey key;
  std::vector<std::string> excluded_reports;
};

// One packet per (report, rater). Throws Uniqueness on duplicate report ids,
// Input on empty reports or raters, Blinding if a payload would leak a
// configuration token.
PacketSet make_packets(const std::vector<CaseReport>& reports, std::uint64_t blinding_seed,
                       const std::vector<std::string>& raters, const PacketOptions& options = {});

std::vector<RaterPacket> packets_from_json(const nlohmann::json& j);
nlohmann::json packets_json(const std::vector<RaterPacket>& packets);

struct Rating {
  std::string packet_id;
  std::string rater_id;
  int completeness = 0;
  int consistency = 0;
  int accuracy = 0;
  int readability = 0;
  bool approved = false;
  std::string timestamp;
};

struct FieldError {
  std::string field;
  std::string message;
};

// Range and presence checks on one rating; empty when valid.
std::vector<FieldError> validate_rating(const Rating& rating);
// Builds a rating from a JSON body, collecting every field problem.
std::pair<std::optional<Rating>, std::vector<FieldError>> rating_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Rating& rating);

inline constexpr std::string_view kRatingsHeader =
    "packet_id,rater_id,completeness,consistency,accuracy,readability,approved,timestamp";

// Throws Range (naming the field), Uniqueness on a repeated (packet, rater),
// UnknownPacket when `known_packets` is given and lacks the id, Parse or
// Schema on malformed files.
std::vector<Rating> parse_ratings(std::string_view csv, const std::set<std::string>* known_packets = nullptr);
std::vector<Rating> ingest_ratings(const std::filesystem::path& path,
                                   const std::set<std::string>* known_packets = nullptr);
std::string ratings_csv(const std::vector<Rating>& ratings);
std::string rating_csv_line(const Rating& rating);

struct ConfigStats {
  std::string config;
  std::size_t ratings = 0;
  std::size_t approvals = 0;
  long score_total = 0;  // sum of all four dimensions over ratings
  double approval_rate = 0.0;
  double quality_mean = 0.0;  // mean of the four dimensions, then over ratings
};

struct DivergenceRow {
  std::string evidence_hash;
  std::string knee_id;
  std::string phenotype_a;
  std::string phenotype_b;
};

struct AggregateReport {
  std::vector<ConfigStats> configs;  // sorted by config id
  std::string divergence_a = "A1";
  std::string divergence_b = "A2";
  std::size_t divergence_pairs = 0;  // evidence hashes seen under both configs
  std::vector<DivergenceRow> divergences;
};

// Fails closed: a null key raises Sealed. Ratings must reference packets in
// the key (UnknownPacket otherwise).
AggregateReport aggregate(const std::vector<Rating>& ratings, const SealedKey* key, std::string config_a = "A1",
                          std::string config_b = "A2");
nlohmann::json to_json(const AggregateReport& report);
std::string aggregate_table(const AggregateReport& report);

// ---------------------------------------------------------------------------
// Serving

class RaterStore {
 public:
  enum class Outcome { Created, Conflict, Invalid, UnknownPacket, NotAssigned };
  struct SubmitResult {
    Outcome outcome = Outcome::Invalid;
    std::vector<FieldError> errors;
  };
  struct Progress {
    std::size_t assigned = 0;
    std::size_t rated = 0;
  };

  explicit RaterStore(std::vector<RaterPacket> packets, std::vector<Rating> existing = {},
                      std::optional<std::filesystem::path> ratings_log = std::nullopt);

  std::vector<RaterPacket> assigned(std::string_view rater) const;
  std::optional<RaterPacket> packet(std::string_view packet_id) const;
  bool rated(std::string_view packet_id, std::string_view rater) const;
  // Atomic per (packet, rater); the first accepted rating wins.
  SubmitResult submit(const Rating& rating);
  Progress progress(std::string_view rater) const;
  std::vector<Rating> ratings() const;

 private:
  mutable std::mutex mutex_;
  std::vector<RaterPacket> packets_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::map<std::pair<std::string, std::string>, Rating> ratings_;
  std::vector<std::pair<std::string, std::string>> order_;
  std::optional<std::filesystem::path> log_;
};

struct ServerOptions {
  // rater id -> bearer token; empty disables authentication.
  std::map<std::string, std::string> tokens;
};

class RaterServer {
 public:
  RaterServer(RaterStore& store, ServerOptions options = {});
  ~RaterServer();
  RaterServer(const RaterServer&) = delete;
  RaterServer& operator=(const RaterServer&) = delete;

  // Returns the bound port; port 0 picks a free one. Throws Io on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace koa
