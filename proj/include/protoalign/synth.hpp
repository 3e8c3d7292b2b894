#pragma once

#include <cstdint>

#include "protoalign/embedding_store.hpp"
#include "protoalign/projection_head.hpp"
#include "protoalign/zeroshot.hpp"

namespace protoalign {

/// Parameters of the synthetic class-cluster world.
///
/// Visual samples of class k are `separation * a_k + noise * eps` with a_k
/// orthonormal anchors in R^L. Their targets are `R u_k + noise * eps'` with
/// u_k orthonormal in R^L' and R a random rotation. `noise` is a per-component
/// standard deviation.
struct SynthSpec {
  std::int64_t num_classes = 7;
  std::int64_t per_class = 200;          // paired training samples per class
  std::int64_t heldout_per_class = 100;  // labeled evaluation samples per class
  std::int64_t visual_dim = 64;
  std::int64_t target_dim = 32;
  double separation = 0.5;
  double noise = 0.05;
  std::uint64_t seed = 0;           // sample draws
  std::uint64_t rotation_seed = 1;  // anchors and rotation

  void validate() const;
};

struct SynthData {
  PairedDataset train;          // unlabeled, paired by order
  EmbeddingStore heldout;       // visual, labeled
  PromptSet prompts;            // visual-space anchors as one-template prompts
  EmbeddingStore target_prototypes;  // R u_k, ids "class:<k>"
  Matrix visual_anchors;        // K x L
  Matrix target_anchors;        // K x L' (u_k, before rotation)
  Matrix rotation;              // L' x L'
};

SynthData synth_generate(const SynthSpec& spec);

/// Haar-distributed orthonormal rows: the first `rows` rows of a random
/// rotation of R^dim.
Matrix random_orthonormal(std::int64_t rows, std::int64_t dim, std::uint64_t seed);

struct LinearSpec {
  std::int64_t samples = 256;
  std::int64_t in_dim = 16;
  std::int64_t out_dim = 8;
  double input_scale = 8.0;
  std::uint64_t seed = 0;
};

/// Noise-free pairs t = W*^T x, exactly representable by a linear head.
struct LinearData {
  PairedDataset pairs;
  Matrix true_map;  // in_dim x out_dim
};

LinearData linear_pairs(const LinearSpec& spec);

}  // namespace protoalign
