#include "specache/vertical_model.hpp"

#include <algorithm>
#include <string>

namespace specache {

std::size_t FeatureLayout::user_bucket(UserId user) const { return hash_coords(salt, 1, user) % hash_buckets; }

std::size_t FeatureLayout::item_bucket(ItemId item) const { return hash_coords(salt, 2, item) % hash_buckets; }

FeatureVector assemble_features(const FeatureLayout& layout, const EnrichedFeature& enriched, UserId user, ItemId item) {
  if (enriched.vector.size() != layout.d_emb || enriched.user_agg.vector.size() != layout.d_emb)
    throw ValidationError("assemble_features: embedding width " + std::to_string(enriched.vector.size()) +
                          " does not match layout d_emb " + std::to_string(layout.d_emb));
  FeatureVector f;
  f.source = enriched.source;
  f.values.assign(layout.dim(), 0.0);
  f.values[0] = 1.0;
  f.values[1 + layout.user_bucket(user)] = 1.0;
  f.values[1 + layout.hash_buckets + layout.item_bucket(item)] = 1.0;
  std::copy(enriched.vector.begin(), enriched.vector.end(), f.values.begin() + static_cast<std::ptrdiff_t>(layout.user_item_offset()));
  std::copy(enriched.user_agg.vector.begin(), enriched.user_agg.vector.end(),
            f.values.begin() + static_cast<std::ptrdiff_t>(layout.user_agg_offset()));
  f.values[layout.flags_offset()] = enriched.source != FeatureSource::absent ? 1.0 : 0.0;
  f.values[layout.flags_offset() + 1] = enriched.user_agg.present ? 1.0 : 0.0;
  return f;
}

VerticalModel::VerticalModel(std::size_t dim, double learning_rate) : weights_(dim, 0.0), learning_rate_(learning_rate) {
  if (dim == 0) throw ValidationError("vertical model needs a positive dimension");
  if (!(learning_rate >= 0.0)) throw ValidationError("learning_rate must be >= 0");
}

void VerticalModel::check(const FeatureVector& features) const {
  if (features.values.size() != weights_.size())
    throw ValidationError("feature dimension " + std::to_string(features.values.size()) + " != model dimension " +
                          std::to_string(weights_.size()));
  if (!all_finite(features.values)) throw ValidationError("non-finite feature value");
}

double VerticalModel::predict(const FeatureVector& features) const {
  check(features);
  return sigmoid(dot(weights_, features.values));
}

Vector VerticalModel::gradient(const FeatureVector& features, int label) const {
  const double residual = predict(features) - static_cast<double>(label);
  Vector g(features.values.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = residual * features.values[k];
  return g;
}

double VerticalModel::loss(const FeatureVector& features, int label) const { return bce(predict(features), label); }

void VerticalModel::sgd_update(const FeatureVector& features, int label) {
  const double step = learning_rate_ * (predict(features) - static_cast<double>(label));
  if (step != 0.0)
    for (std::size_t k = 0; k < weights_.size(); ++k) weights_[k] -= step * features.values[k];
  ++step_count_;
}

VerticalModel sgd_update(VerticalModel model, const FeatureVector& features, int label) {
  model.sgd_update(features, label);
  return model;
}

}  // namespace specache
