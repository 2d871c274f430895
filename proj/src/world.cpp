#include "specache/world.hpp"

#include <algorithm>
#include <istream>
#include <mutex>
#include <ostream>
#include <string>
#include <unordered_set>

namespace specache {

namespace {

constexpr std::uint64_t kDriftTag = 0xD21F7;
constexpr std::uint64_t kNoiseTag = 0x401CE;
constexpr std::uint64_t kCoinTag = 0xC011;
constexpr std::uint64_t kStreamTag = 0x57AEA;

std::size_t sample_cdf(const std::vector<double>& cdf, double u) {
  const double target = u * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

}  // namespace

void WorldConfig::validate() const {
  if (n_users < 1) throw ValidationError("n_users must be >= 1");
  if (n_items < 1) throw ValidationError("n_items must be >= 1");
  if (d_lat < 1) throw ValidationError("d_lat must be >= 1");
  if (candidates_per_request < 1) throw ValidationError("candidates_per_request must be >= 1");
  if (!(revisit_probability >= 0.0 && revisit_probability <= 1.0))
    throw ValidationError("revisit_probability must lie in [0, 1]");
  if (!(revisit_window_hours > 0.0)) throw ValidationError("revisit_window_hours must be positive");
  if (!(drift_rate >= 0.0)) throw ValidationError("drift_rate must be >= 0");
  if (!(label_noise >= 0.0)) throw ValidationError("label_noise must be >= 0");
  if (!(popularity_exponent >= 0.0)) throw ValidationError("popularity_exponent must be >= 0");
  if (!(mean_interarrival_seconds > 0.0))
    throw ValidationError("mean_interarrival_seconds must be positive");
  if (!(ranking_noise >= 0.0)) throw ValidationError("ranking_noise must be >= 0");
}

void to_json(Json& j, const WorldConfig& c) {
  j = Json{{"n_users", c.n_users},
           {"n_items", c.n_items},
           {"d_lat", c.d_lat},
           {"candidates_per_request", c.candidates_per_request},
           {"revisit_probability", c.revisit_probability},
           {"revisit_window_hours", c.revisit_window_hours},
           {"drift_rate", c.drift_rate},
           {"label_noise", c.label_noise},
           {"popularity_exponent", c.popularity_exponent},
           {"mean_interarrival_seconds", c.mean_interarrival_seconds},
           {"ranking_noise", c.ranking_noise},
           {"seed", c.seed}};
}

WorldConfig world_config_from_json(const Json& j, const std::string& path) {
  WorldConfig c;
  StrictObject o(j, path);
  o.read("n_users", c.n_users);
  o.read("n_items", c.n_items);
  o.read("d_lat", c.d_lat);
  o.read("candidates_per_request", c.candidates_per_request);
  o.read("revisit_probability", c.revisit_probability);
  o.read("revisit_window_hours", c.revisit_window_hours);
  o.read("drift_rate", c.drift_rate);
  o.read("label_noise", c.label_noise);
  o.read("popularity_exponent", c.popularity_exponent);
  o.read("mean_interarrival_seconds", c.mean_interarrival_seconds);
  o.read("ranking_noise", c.ranking_noise);
  o.read("seed", c.seed);
  o.finish();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(path.empty() ? "/" : path, e.what());
  }
  return c;
}

void to_json(Json& j, const RankingRequest& r) {
  j = Json{{"request_id", r.request_id},
           {"user_id", r.user_id},
           {"timestamp", r.timestamp},
           {"candidates", r.candidates}};
}

void from_json(const Json& j, RankingRequest& r) {
  j.at("request_id").get_to(r.request_id);
  j.at("user_id").get_to(r.user_id);
  j.at("timestamp").get_to(r.timestamp);
  j.at("candidates").get_to(r.candidates);
}

// ---------------------------------------------------------------------------
// World
// ---------------------------------------------------------------------------

// Cumulative random-walk position of each user at whole-hour marks, extended
// on demand. Row h of a user's path holds the offset at hour h.
struct World::DriftMemo {
  std::mutex mu;
  std::vector<std::vector<double>> paths;
};

World::World(WorldConfig config, std::vector<UserProfile> users, std::vector<ItemProfile> items)
    : config_(config),
      users_(std::move(users)),
      items_(std::move(items)),
      drift_(std::make_unique<DriftMemo>()) {
  config_.n_users = static_cast<std::uint32_t>(users_.size());
  config_.n_items = static_cast<std::uint32_t>(items_.size());
  if (users_.empty() || items_.empty()) throw ValidationError("world needs at least one user and one item");
  for (std::size_t k = 0; k < users_.size(); ++k) {
    if (users_[k].user_id != k) throw ValidationError("user ids must be dense and ordered");
    if (users_[k].latent.size() != config_.d_lat) throw ValidationError("user latent has wrong dimension");
    if (!(users_[k].drift_rate >= 0.0)) throw ValidationError("drift_rate must be >= 0");
  }
  popularity_cdf_.reserve(items_.size());
  double total = 0.0;
  for (std::size_t k = 0; k < items_.size(); ++k) {
    if (items_[k].item_id != k) throw ValidationError("item ids must be dense and ordered");
    if (items_[k].latent.size() != config_.d_lat) throw ValidationError("item latent has wrong dimension");
    if (!(items_[k].popularity_weight > 0.0)) throw ValidationError("popularity weights must be positive");
    total += items_[k].popularity_weight;
    popularity_cdf_.push_back(total);
  }
  drift_->paths.resize(users_.size());
}

World::World(World&&) noexcept = default;
World& World::operator=(World&&) noexcept = default;
World::~World() = default;

World World::generate(const WorldConfig& config) {
  config.validate();
  Rng rng(config.seed);
  std::vector<UserProfile> users(config.n_users);
  for (UserId u = 0; u < config.n_users; ++u) {
    users[u].user_id = u;
    users[u].drift_rate = config.drift_rate;
    users[u].latent.resize(config.d_lat);
    for (auto& x : users[u].latent) x = rng.normal();
  }
  std::vector<ItemProfile> items(config.n_items);
  for (ItemId i = 0; i < config.n_items; ++i) {
    items[i].item_id = i;
    items[i].latent.resize(config.d_lat);
    for (auto& x : items[i].latent) x = rng.normal();
    items[i].popularity_weight = std::pow(static_cast<double>(i) + 1.0, -config.popularity_exponent);
  }
  return World(config, std::move(users), std::move(items));
}

const UserProfile& World::user(UserId id) const {
  if (id >= users_.size()) throw LookupError("unknown user_id " + std::to_string(id));
  return users_[id];
}

const ItemProfile& World::item(ItemId id) const {
  if (id >= items_.size()) throw LookupError("unknown item_id " + std::to_string(id));
  return items_[id];
}

Vector World::user_latent_at(UserId id, SimTime clock) const {
  const UserProfile& profile = user(id);
  Vector latent = profile.latent;
  if (profile.drift_rate == 0.0 || clock <= 0.0) return latent;

  const std::size_t d = config_.d_lat;
  const double hours = clock / kHour;
  const auto whole = static_cast<std::size_t>(hours);
  const double frac = hours - static_cast<double>(whole);
  auto step = [&](std::size_t hour, std::size_t dim) {
    const std::uint64_t a = hash_coords(config_.seed, kDriftTag, id, hour, dim, 0);
    const std::uint64_t b = hash_coords(config_.seed, kDriftTag, id, hour, dim, 1);
    return profile.drift_rate * normal_from_bits(a, b);
  };

  std::lock_guard lock(drift_->mu);
  auto& path = drift_->paths[id];
  if (path.empty()) path.assign(d, 0.0);
  while (path.size() / d <= whole) {
    const std::size_t hour = path.size() / d - 1;
    for (std::size_t k = 0; k < d; ++k) path.push_back(path[hour * d + k] + step(hour, k));
  }
  for (std::size_t k = 0; k < d; ++k) latent[k] += path[whole * d + k] + frac * step(whole, k);
  return latent;
}

double World::label_probability(UserId user_id, ItemId item_id, SimTime clock) const {
  const Vector u = user_latent_at(user_id, clock);
  const ItemProfile& it = item(item_id);
  double z = dot(u, it.latent);
  if (config_.label_noise > 0.0) {
    const std::uint64_t a = hash_coords(config_.seed, kNoiseTag, user_id, item_id, time_bits(clock), 0);
    const std::uint64_t b = hash_coords(config_.seed, kNoiseTag, user_id, item_id, time_bits(clock), 1);
    z += config_.label_noise * normal_from_bits(a, b);
  }
  return sigmoid(z);
}

int World::true_label(UserId user_id, ItemId item_id, SimTime clock) const {
  const double p = label_probability(user_id, item_id, clock);
  const double coin = unit_from_bits(hash_coords(config_.seed, kCoinTag, user_id, item_id, time_bits(clock)));
  return coin < p ? 1 : 0;
}

ItemId World::draw_item(Rng& rng) const {
  return static_cast<ItemId>(sample_cdf(popularity_cdf_, rng.uniform()));
}

// ---------------------------------------------------------------------------
// RequestStream
// ---------------------------------------------------------------------------

RequestStream::RequestStream(const World& world)
    : world_(world), rng_(hash_coords(world.config().seed, kStreamTag)) {
  if (world.config().candidates_per_request > world.items().size())
    throw ValidationError("candidates_per_request exceeds the catalog; candidates must be distinct");
}

void RequestStream::set_activity_weights(const std::vector<double>& weights) {
  if (weights.size() != world_.users().size())
    throw ValidationError("activity weights need one entry per user");
  std::vector<double> cdf;
  cdf.reserve(weights.size());
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ValidationError("activity weights must be positive");
    total += w;
    cdf.push_back(total);
  }
  activity_cdf_ = std::move(cdf);
}

RankingRequest RequestStream::next() {
  return next_at(clock_ + rng_.exponential(world_.config().mean_interarrival_seconds));
}

RankingRequest RequestStream::next_at(SimTime clock) {
  if (clock < clock_) throw ValidationError("request clock moved backwards");
  clock_ = clock;
  const WorldConfig& cfg = world_.config();
  const Duration window = cfg.revisit_window_hours * kHour;

  RankingRequest req;
  req.request_id = next_id_++;
  req.timestamp = clock;
  req.user_id = activity_cdf_.empty() ? static_cast<UserId>(rng_.below(world_.users().size()))
                                      : static_cast<UserId>(sample_cdf(activity_cdf_, rng_.uniform()));

  auto& shown = history_[req.user_id];
  while (!shown.empty() && clock - shown.front().at > window) shown.pop_front();

  std::vector<ItemId> recent;
  {
    std::unordered_set<ItemId> seen;
    for (const auto& s : shown)
      for (ItemId i : s.items)
        if (seen.insert(i).second) recent.push_back(i);
  }

  const std::size_t n = cfg.candidates_per_request;
  std::unordered_set<ItemId> chosen;
  chosen.reserve(n * 2);
  req.candidates.reserve(n);
  std::size_t recent_left = recent.size();
  while (req.candidates.size() < n) {
    ItemId pick;
    if (recent_left > 0 && rng_.uniform() < cfg.revisit_probability) {
      // Partial Fisher-Yates over the recent union: each revisit slot takes a
      // distinct recent item uniformly at random.
      const std::size_t k = rng_.below(recent_left);
      pick = recent[k];
      std::swap(recent[k], recent[recent_left - 1]);
      --recent_left;
      if (!chosen.insert(pick).second) continue;
    } else {
      do {
        pick = world_.draw_item(rng_);
      } while (chosen.count(pick));
      chosen.insert(pick);
    }
    req.candidates.push_back(pick);
  }

  // Early-stage ranking order: true affinity at request time plus noise.
  const Vector u = world_.user_latent_at(req.user_id, clock);
  std::vector<std::pair<double, ItemId>> keyed;
  keyed.reserve(n);
  for (ItemId i : req.candidates) keyed.emplace_back(dot(u, world_.item(i).latent) + cfg.ranking_noise * rng_.normal(), i);
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (std::size_t k = 0; k < n; ++k) req.candidates[k] = keyed[k].second;

  shown.push_back({clock, req.candidates});
  return req;
}

std::vector<RankingRequest> generate_trace(const World& world, std::size_t n) {
  RequestStream stream(world);
  std::vector<RankingRequest> trace;
  trace.reserve(n);
  for (std::size_t k = 0; k < n; ++k) trace.push_back(stream.next());
  return trace;
}

LocalityStats measure_locality(const std::vector<RankingRequest>& trace, Duration window) {
  LocalityStats stats;
  std::unordered_map<UserId, std::deque<const RankingRequest*>> by_user;
  double sum = 0.0;
  for (const auto& req : trace) {
    ++stats.requests;
    auto& past = by_user[req.user_id];
    while (!past.empty() && req.timestamp - past.front()->timestamp > window) past.pop_front();
    if (!past.empty()) {
      std::unordered_set<ItemId> seen;
      for (const auto* p : past) seen.insert(p->candidates.begin(), p->candidates.end());
      std::size_t hits = 0;
      for (ItemId i : req.candidates) hits += seen.count(i);
      sum += static_cast<double>(hits) / static_cast<double>(req.candidates.size());
      ++stats.requests_with_history;
    }
    past.push_back(&req);
  }
  if (stats.requests_with_history > 0) stats.mean_overlap = sum / static_cast<double>(stats.requests_with_history);
  if (stats.requests > 0) stats.mean_overlap_all = sum / static_cast<double>(stats.requests);
  return stats;
}

void write_trace(std::ostream& out, const std::vector<RankingRequest>& trace) {
  for (const auto& r : trace) {
    OrderedJson j;
    j["request_id"] = r.request_id;
    j["user_id"] = r.user_id;
    j["timestamp"] = r.timestamp;
    j["candidates"] = r.candidates;
    out << j.dump() << '\n';
  }
}

std::vector<RankingRequest> read_trace(std::istream& in) {
  std::vector<RankingRequest> trace;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      trace.push_back(Json::parse(line).get<RankingRequest>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return trace;
}

}  // namespace specache
