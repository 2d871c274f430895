#pragma once

#include <cstdint>
#include <span>

#include "specache/common.hpp"
#include "specache/enrichment.hpp"

namespace specache {

/// Fixed layout of the vertical model's input:
///
///   [ bias | user id buckets | item id buckets | user-item embedding |
///     aggregated user embedding | exact-or-imputed flag | aggregate flag ]
///
/// The id buckets are one-hot salted hashes of the ids.
struct FeatureLayout {
  std::size_t hash_buckets = 64;
  std::size_t d_emb = 8;
  std::uint64_t salt = 0x5A17;

  std::size_t base_dim() const { return 1 + 2 * hash_buckets; }
  std::size_t user_item_offset() const { return base_dim(); }
  std::size_t user_agg_offset() const { return base_dim() + d_emb; }
  std::size_t flags_offset() const { return base_dim() + 2 * d_emb; }
  std::size_t dim() const { return base_dim() + 2 * d_emb + 2; }

  std::size_t user_bucket(UserId user) const;
  std::size_t item_bucket(ItemId item) const;
};

struct FeatureVector {
  Vector values;
  FeatureSource source = FeatureSource::absent;

  std::span<const double> slice(std::size_t offset, std::size_t len) const {
    return std::span<const double>(values).subspan(offset, len);
  }
  bool operator==(const FeatureVector&) const = default;
};

/// Throws ValidationError if the enriched vectors do not match layout.d_emb.
FeatureVector assemble_features(const FeatureLayout& layout, const EnrichedFeature& enriched, UserId user, ItemId item);

/// Online logistic regression over FeatureVector.
class VerticalModel {
 public:
  VerticalModel(std::size_t dim, double learning_rate);

  /// sigmoid(w . x). Throws ValidationError on dimension mismatch or
  /// non-finite features.
  double predict(const FeatureVector& features) const;

  /// Gradient of the BCE loss with respect to the weights: (p - y) x.
  Vector gradient(const FeatureVector& features, int label) const;

  double loss(const FeatureVector& features, int label) const;

  /// One SGD step on the BCE loss.
  void sgd_update(const FeatureVector& features, int label);

  const Vector& weights() const { return weights_; }
  Vector& mutable_weights() { return weights_; }
  double learning_rate() const { return learning_rate_; }
  std::uint64_t step_count() const { return step_count_; }

 private:
  void check(const FeatureVector& features) const;

  Vector weights_;
  double learning_rate_;
  std::uint64_t step_count_ = 0;
};

/// Value-returning form of VerticalModel::sgd_update.
VerticalModel sgd_update(VerticalModel model, const FeatureVector& features, int label);

}  // namespace specache
