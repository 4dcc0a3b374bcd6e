#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oatlab/tensor.hpp"

namespace oatlab {

/// Immutable image classification dataset. Pixels live in [0,1].
struct Dataset {
  Tensor images;            // [N,C,H,W]
  std::vector<int> labels;  // N entries, each < classes
  int classes = 0;
  std::string split;

  std::int64_t size() const { return images.defined() ? images.dim(0) : 0; }

  /// Images `rows` as a [n,C,H,W] batch plus their labels.
  std::pair<Tensor, std::vector<int>> batch(const std::vector<std::int64_t>& rows) const;
};

/// Procedural glyph task: `classes` distinct stroke patterns drawn at random
/// ±2 px offsets with additive Gaussian noise, clipped to [0,1].
/// Deterministic per seed.
Dataset synth_glyphs(int n_per_class, int classes, int size, double noise_sigma,
                     std::uint64_t seed, std::string split = "train");

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads an MNIST-style IDX image/label file pair (big-endian; image magic
/// 0x00000803, label magic 0x00000801). Pixels are scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Shuffled epoch iterator. The permutation is a pure function of
/// (seed, epoch); the final partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::int64_t batch_size, std::uint64_t seed);

  /// False once the epoch is exhausted; advance_epoch() starts the next one.
  bool next(Tensor& x, std::vector<int>& y);
  void advance_epoch();

  std::int64_t epoch() const { return epoch_; }
  std::int64_t batches_per_epoch() const;

 private:
  void reshuffle();

  const Dataset* ds_;
  std::int64_t batch_size_;
  std::uint64_t seed_;
  std::int64_t epoch_ = 0;
  std::int64_t cursor_ = 0;
  std::vector<std::int64_t> order_;
};

}  // namespace oatlab
