#pragma once

#include <cstdint>
#include <iosfwd>

#include <Eigen/Dense>

#include "specache/common.hpp"
#include "specache/json_util.hpp"
#include "specache/world.hpp"

namespace specache {

/// Compressed user-item interaction vector as served to the vertical model.
struct TeacherEmbedding {
  Vector vector;
  SimTime computed_at = 0.0;

  bool operator==(const TeacherEmbedding&) const = default;
};

/// [u * v (elementwise) | u | v]. Throws ValidationError if sizes differ.
Vector raw_interaction(std::span<const double> user_latent, std::span<const double> item_latent);

/// Fixed linear compression of raw interaction vectors (d_raw x d_emb).
///
/// Stands in for a trained autoencoder bottleneck. The user-latent row block
/// doubles as the projection for per-user embeddings, so user vectors live in
/// the same space as the interaction embeddings.
class CompressionMap {
 public:
  /// Gaussian entries scaled by 1/sqrt(d_raw), drawn from `seed`.
  static CompressionMap random(std::size_t d_lat, std::size_t d_emb, std::uint64_t seed);

  /// Explicit projection; rows must be a multiple of three (d_raw = 3 d_lat).
  /// Throws ValidationError unless the matrix has full column rank.
  explicit CompressionMap(Eigen::MatrixXd projection);

  std::size_t d_lat() const { return static_cast<std::size_t>(projection_.rows()) / 3; }
  std::size_t d_raw() const { return static_cast<std::size_t>(projection_.rows()); }
  std::size_t d_emb() const { return static_cast<std::size_t>(projection_.cols()); }
  const Eigen::MatrixXd& projection() const { return projection_; }

  /// projection^T * raw.
  Vector compress(std::span<const double> raw) const;

  /// projection^T * [0 | latent | 0].
  Vector compress_user(std::span<const double> user_latent) const;

  bool operator==(const CompressionMap& other) const { return projection_ == other.projection_; }

 private:
  Eigen::MatrixXd projection_;
};

/// {"d_raw": r, "d_emb": e, "rows": [[...], ...]} with full double precision.
void to_json(Json& j, const CompressionMap& map);
CompressionMap compression_map_from_json(const Json& j);

/// Latent-factor teacher bound to one world.
///
/// Outputs depend only on the world seed and the (user, item) ids; the clock
/// is stamped onto the result and never read otherwise.
class Teacher {
 public:
  Teacher(const World& world, CompressionMap map);

  /// Uses CompressionMap::random with a seed derived from the world seed.
  static Teacher for_world(const World& world, std::size_t d_emb);

  TeacherEmbedding compute_interaction_embedding(UserId user, ItemId item, SimTime clock) const;
  Vector compute_user_embedding(UserId user) const;

  const CompressionMap& map() const { return map_; }
  const World& world() const { return world_; }
  std::size_t d_emb() const { return map_.d_emb(); }

 private:
  const World& world_;
  CompressionMap map_;
};

/// Per-embedding background cost charged to worker time. Never charged to
/// the serving path.
struct TeacherCostConfig {
  Duration per_embedding_cost = 0.050;
};

inline Duration simulate_compute_latency(const TeacherCostConfig& config) { return config.per_embedding_cost; }

}  // namespace specache
