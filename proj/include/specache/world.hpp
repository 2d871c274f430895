#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

#include "specache/common.hpp"
#include "specache/json_util.hpp"

namespace specache {

/// Knobs of the synthetic population and its request stream.
///
/// The defaults are the shipped calibration: with a 6 hour window the mean
/// fraction of a request's candidates that the same user was already shown
/// inside the window lands near 0.6.
struct WorldConfig {
  std::uint32_t n_users = 2500;
  std::uint32_t n_items = 150000;
  std::uint32_t d_lat = 16;
  std::uint32_t candidates_per_request = 200;
  double revisit_probability = 0.6;
  double revisit_window_hours = 6.0;
  /// Per-hour standard deviation of each latent component's random walk.
  double drift_rate = 0.02;
  /// Standard deviation of the logit noise in true_label.
  double label_noise = 0.5;
  /// Zipf exponent of item popularity (weight of rank r is (r + 1)^-s).
  double popularity_exponent = 0.3;
  /// Mean of the exponential inter-request gap, simulated seconds.
  double mean_interarrival_seconds = 10.0;
  /// Noise added to true affinity when ordering a request's candidates.
  double ranking_noise = 1.0;
  std::uint64_t seed = 1;

  /// Throws ValidationError on zero counts or out-of-range probabilities.
  void validate() const;
};

void to_json(Json& j, const WorldConfig& c);
/// Strict parse: unknown keys are rejected. Missing keys keep defaults.
WorldConfig world_config_from_json(const Json& j, const std::string& path = "");

struct UserProfile {
  UserId user_id = 0;
  Vector latent;
  double drift_rate = 0.0;
};

struct ItemProfile {
  ItemId item_id = 0;
  Vector latent;
  double popularity_weight = 1.0;
};

struct RankingRequest {
  std::uint64_t request_id = 0;
  UserId user_id = 0;
  SimTime timestamp = 0.0;
  std::vector<ItemId> candidates;

  bool operator==(const RankingRequest&) const = default;
};

void to_json(Json& j, const RankingRequest& r);
void from_json(const Json& j, RankingRequest& r);

/// Synthetic users and items with latent affinity factors.
///
/// Immutable after construction apart from an internal memo of drift paths,
/// which is guarded and invisible to callers. Ids are dense: user k has
/// user_id k.
class World {
 public:
  static World generate(const WorldConfig& config);

  /// Assembles a world from explicit profiles (used by tests and replays).
  World(WorldConfig config, std::vector<UserProfile> users, std::vector<ItemProfile> items);

  World(World&&) noexcept;
  World& operator=(World&&) noexcept;
  ~World();

  const WorldConfig& config() const { return config_; }
  const std::vector<UserProfile>& users() const { return users_; }
  const std::vector<ItemProfile>& items() const { return items_; }

  const UserProfile& user(UserId id) const;
  const ItemProfile& item(ItemId id) const;

  /// User latent after drift accumulated up to `clock`.
  Vector user_latent_at(UserId id, SimTime clock) const;

  /// sigmoid(<user(clock), item> + noise). The noise draw is a pure function
  /// of (seed, user, item, clock).
  double label_probability(UserId user, ItemId item, SimTime clock) const;

  /// Bernoulli(label_probability), deterministic given (seed, user, item, clock).
  int true_label(UserId user, ItemId item, SimTime clock) const;

  /// Popularity-weighted item draw.
  ItemId draw_item(Rng& rng) const;

 private:
  struct DriftMemo;

  WorldConfig config_;
  std::vector<UserProfile> users_;
  std::vector<ItemProfile> items_;
  std::vector<double> popularity_cdf_;
  std::unique_ptr<DriftMemo> drift_;
};

/// Stateful request generator with per-user revisit locality.
class RequestStream {
 public:
  explicit RequestStream(const World& world);

  /// Next request at `clock` (must not precede the previous request).
  RankingRequest next_at(SimTime clock);

  /// Next request after an exponential inter-arrival gap.
  RankingRequest next();

  /// Optional per-user sampling weights; must have one positive entry per user.
  void set_activity_weights(const std::vector<double>& weights);

  SimTime clock() const { return clock_; }

 private:
  struct Shown {
    SimTime at;
    std::vector<ItemId> items;
  };

  const World& world_;
  Rng rng_;
  SimTime clock_ = 0.0;
  std::uint64_t next_id_ = 0;
  std::vector<double> activity_cdf_;
  std::unordered_map<UserId, std::deque<Shown>> history_;
};

/// Convenience: the first `n` requests of a fresh stream over `world`.
std::vector<RankingRequest> generate_trace(const World& world, std::size_t n);

struct LocalityStats {
  std::size_t requests = 0;
  std::size_t requests_with_history = 0;
  /// Mean per-request overlap over requests whose user had any candidates in
  /// the window. This is the calibration target.
  double mean_overlap = 0.0;
  /// Same mean, counting history-less requests as overlap 0.
  double mean_overlap_all = 0.0;
};

/// Per-request fraction of candidates that the same user was shown within
/// the preceding `window`, computed directly from a trace.
LocalityStats measure_locality(const std::vector<RankingRequest>& trace, Duration window);

void write_trace(std::ostream& out, const std::vector<RankingRequest>& trace);
std::vector<RankingRequest> read_trace(std::istream& in);

}  // namespace specache
