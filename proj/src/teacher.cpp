#include "specache/teacher.hpp"

#include <cmath>

namespace specache {

namespace {
constexpr std::uint64_t kProjectionTag = 0x7EAC4E;
}

Vector raw_interaction(std::span<const double> user_latent, std::span<const double> item_latent) {
  if (user_latent.size() != item_latent.size())
    throw ValidationError("raw_interaction: latent dimensions differ (" + std::to_string(user_latent.size()) +
                          " vs " + std::to_string(item_latent.size()) + ")");
  const std::size_t d = user_latent.size();
  Vector raw(3 * d);
  for (std::size_t k = 0; k < d; ++k) {
    raw[k] = user_latent[k] * item_latent[k];
    raw[d + k] = user_latent[k];
    raw[2 * d + k] = item_latent[k];
  }
  return raw;
}

CompressionMap::CompressionMap(Eigen::MatrixXd projection) : projection_(std::move(projection)) {
  if (projection_.rows() == 0 || projection_.cols() == 0 || projection_.rows() % 3 != 0)
    throw ValidationError("projection must be (3 d_lat) x d_emb and non-empty");
  if (projection_.cols() > projection_.rows())
    throw ValidationError("projection cannot have more columns than rows");
  if (!projection_.allFinite()) throw ValidationError("projection has non-finite entries");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(projection_);
  if (lu.rank() != projection_.cols()) throw ValidationError("projection must have full column rank");
}

CompressionMap CompressionMap::random(std::size_t d_lat, std::size_t d_emb, std::uint64_t seed) {
  const std::size_t d_raw = 3 * d_lat;
  Rng rng(hash_coords(seed, kProjectionTag));
  Eigen::MatrixXd p(d_raw, d_emb);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_raw));
  for (std::size_t r = 0; r < d_raw; ++r)
    for (std::size_t c = 0; c < d_emb; ++c) p(r, c) = scale * rng.normal();
  return CompressionMap(std::move(p));
}

Vector CompressionMap::compress(std::span<const double> raw) const {
  if (raw.size() != d_raw()) throw ValidationError("compress: raw vector has wrong dimension");
  Vector out(d_emb(), 0.0);
  for (std::size_t r = 0; r < raw.size(); ++r) {
    const double x = raw[r];
    if (x == 0.0) continue;
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += projection_(r, c) * x;
  }
  return out;
}

Vector CompressionMap::compress_user(std::span<const double> user_latent) const {
  const std::size_t d = d_lat();
  if (user_latent.size() != d) throw ValidationError("compress_user: latent has wrong dimension");
  Vector out(d_emb(), 0.0);
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += projection_(d + k, c) * user_latent[k];
  return out;
}

void to_json(Json& j, const CompressionMap& map) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < map.projection().rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < map.projection().cols(); ++c) row.push_back(map.projection()(r, c));
    rows.push_back(std::move(row));
  }
  j = Json{{"d_raw", map.d_raw()}, {"d_emb", map.d_emb()}, {"rows", std::move(rows)}};
}

CompressionMap compression_map_from_json(const Json& j) {
  try {
    const auto d_raw = j.at("d_raw").get<std::size_t>();
    const auto d_emb = j.at("d_emb").get<std::size_t>();
    const Json& rows = j.at("rows");
    if (rows.size() != d_raw) throw ValidationError("compression map: row count does not match d_raw");
    Eigen::MatrixXd p(d_raw, d_emb);
    for (std::size_t r = 0; r < d_raw; ++r) {
      if (rows[r].size() != d_emb) throw ValidationError("compression map: row length does not match d_emb");
      for (std::size_t c = 0; c < d_emb; ++c) p(r, c) = rows[r][c].get<double>();
    }
    return CompressionMap(std::move(p));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("compression map: ") + e.what());
  }
}

Teacher::Teacher(const World& world, CompressionMap map) : world_(world), map_(std::move(map)) {
  if (map_.d_lat() != world_.config().d_lat)
    throw ValidationError("compression map does not match world latent dimension");
}

Teacher Teacher::for_world(const World& world, std::size_t d_emb) {
  return Teacher(world, CompressionMap::random(world.config().d_lat, d_emb, world.config().seed));
}

TeacherEmbedding Teacher::compute_interaction_embedding(UserId user, ItemId item, SimTime clock) const {
  const Vector raw = raw_interaction(world_.user(user).latent, world_.item(item).latent);
  return TeacherEmbedding{map_.compress(raw), clock};
}

Vector Teacher::compute_user_embedding(UserId user) const { return map_.compress_user(world_.user(user).latent); }

}  // namespace specache
