#include "oatlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "oatlab/rng.hpp"

namespace oatlab {

std::pair<Tensor, std::vector<int>> Dataset::batch(const std::vector<std::int64_t>& rows) const {
  const std::int64_t C = images.dim(1), H = images.dim(2), W = images.dim(3);
  const std::int64_t stride = C * H * W;
  Tensor x = Tensor::zeros({static_cast<std::int64_t>(rows.size()), C, H, W});
  std::vector<int> y(rows.size());
  auto& xv = x.mutable_data();
  const auto& iv = images.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::int64_t r = rows[i];
    if (r < 0 || r >= size()) throw std::out_of_range("Dataset::batch: row out of range");
    std::copy_n(iv.data() + r * stride, stride, xv.data() + static_cast<std::int64_t>(i) * stride);
    y[i] = labels[static_cast<std::size_t>(r)];
  }
  return {x, y};
}

namespace {

constexpr double kGlyphInk = 0.35;

// Ten stroke patterns on a g x g cell grid, indexed by fractional position.
bool glyph_cell(int cls, int r, int c, int g) {
  const auto band = [&](int v, double lo, double hi) {
    return v >= static_cast<int>(lo * g) && v < static_cast<int>(hi * g);
  };
  const bool hbar = band(r, 0.4, 0.6);
  const bool vbar = band(c, 0.4, 0.6);
  const bool diag = std::abs(r - c) * 10 <= g;
  const bool anti = std::abs(r + c - (g - 1)) * 10 <= g;
  switch (cls) {
    case 0: return hbar;
    case 1: return vbar;
    case 2: return diag;
    case 3: return anti;
    case 4: return hbar || vbar;
    case 5: return diag || anti;
    case 6: return !(band(r, 0.2, 0.8) && band(c, 0.2, 0.8));  // ring
    case 7: return band(r, 0.2, 0.8) && band(c, 0.2, 0.8);     // block
    case 8: return (!band(r, 0.3, 0.7)) && (!band(c, 0.3, 0.7));  // corners
    case 9: return band(r, 0.0, 0.2) || vbar;                  // T
    default: return false;
  }
}

}  // namespace

Dataset synth_glyphs(int n_per_class, int classes, int size, double noise_sigma,
                     std::uint64_t seed, std::string split) {
  if (size < 8) throw std::invalid_argument("synth_glyphs: size must be >= 8");
  if (classes < 1 || classes > 10)
    throw std::invalid_argument("synth_glyphs: classes must be in [1,10]");
  if (n_per_class < 1) throw std::invalid_argument("synth_glyphs: n_per_class must be positive");

  const int g = size - 6;  // glyph box leaves room for +/-2 px jitter
  const std::int64_t n = static_cast<std::int64_t>(n_per_class) * classes;
  Dataset ds;
  ds.classes = classes;
  ds.split = std::move(split);
  ds.images = Tensor::zeros({n, 1, size, size});
  ds.labels.resize(static_cast<std::size_t>(n));

  std::mt19937_64 rng(derive_seed(seed, 0x676c79ULL));
  auto& px = ds.images.mutable_data();
  std::int64_t img = 0;
  for (int cls = 0; cls < classes; ++cls)
    for (int i = 0; i < n_per_class; ++i, ++img) {
      ds.labels[static_cast<std::size_t>(img)] = cls;
      const int dx = static_cast<int>(rand_below(rng, 5)) - 2;
      const int dy = static_cast<int>(rand_below(rng, 5)) - 2;
      const int org = 3;
      double* im = px.data() + img * size * size;
      for (int r = 0; r < g; ++r)
        for (int c = 0; c < g; ++c)
          if (glyph_cell(cls, r, c, g)) im[(org + dy + r) * size + (org + dx + c)] = kGlyphInk;
      for (int p = 0; p < size * size; ++p) {
        const double v = im[p] + noise_sigma * rand_normal(rng);
        im[p] = store_value(std::clamp(v, 0.0, 1.0));
      }
    }
  return ds;
}

namespace {

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off,
                        const std::string& path) {
  if (off + 4 > buf.size())
    throw IdxError(path + ": truncated header at byte offset " + std::to_string(off));
  return (static_cast<std::uint32_t>(buf[off]) << 24) | (static_cast<std::uint32_t>(buf[off + 1]) << 16) |
         (static_cast<std::uint32_t>(buf[off + 2]) << 8) | static_cast<std::uint32_t>(buf[off + 3]);
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(path + ": cannot open file");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto ibuf = read_file(images_path);
  const auto lbuf = read_file(labels_path);

  const std::uint32_t imagic = read_be32(ibuf, 0, images_path);
  if (imagic != 0x00000803u)
    throw IdxError(images_path + ": bad image magic " + std::to_string(imagic) +
                   " (expected 2051)");
  const std::uint32_t lmagic = read_be32(lbuf, 0, labels_path);
  if (lmagic != 0x00000801u)
    throw IdxError(labels_path + ": bad label magic " + std::to_string(lmagic) +
                   " (expected 2049)");

  const std::uint32_t n = read_be32(ibuf, 4, images_path);
  const std::uint32_t rows = read_be32(ibuf, 8, images_path);
  const std::uint32_t cols = read_be32(ibuf, 12, images_path);
  const std::uint32_t nl = read_be32(lbuf, 4, labels_path);
  if (n != nl)
    throw IdxError("image/label count mismatch: " + std::to_string(n) + " images vs " +
                   std::to_string(nl) + " labels");
  if (n == 0) throw IdxError(images_path + ": empty dataset");

  const std::size_t want = 16 + static_cast<std::size_t>(n) * rows * cols;
  if (ibuf.size() < want)
    throw IdxError(images_path + ": truncated payload at byte offset " +
                   std::to_string(ibuf.size()) + " (need " + std::to_string(want) + ")");
  if (lbuf.size() < 8 + n)
    throw IdxError(labels_path + ": truncated payload at byte offset " +
                   std::to_string(lbuf.size()) + " (need " + std::to_string(8 + n) + ")");

  Dataset ds;
  ds.split = "idx";
  ds.images = Tensor::zeros({static_cast<std::int64_t>(n), 1, static_cast<std::int64_t>(rows),
                             static_cast<std::int64_t>(cols)});
  ds.labels.resize(n);
  auto& px = ds.images.mutable_data();
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * rows * cols; ++i)
    px[i] = store_value(static_cast<double>(ibuf[16 + i]) / 255.0);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<int>(lbuf[8 + i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.classes = max_label + 1;
  return ds;
}

BatchIterator::BatchIterator(const Dataset& ds, std::int64_t batch_size, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw std::invalid_argument("BatchIterator: batch_size must be positive");
  if (ds.size() == 0) throw std::invalid_argument("BatchIterator: empty dataset");
  order_.resize(static_cast<std::size_t>(ds.size()));
  reshuffle();
}

void BatchIterator::reshuffle() {
  std::iota(order_.begin(), order_.end(), 0);
  std::mt19937_64 rng(derive_seed(seed_, static_cast<std::uint64_t>(epoch_) + 0x657063ULL));
  shuffle(order_, rng);
  cursor_ = 0;
}

bool BatchIterator::next(Tensor& x, std::vector<int>& y) {
  if (cursor_ >= ds_->size()) return false;
  const std::int64_t take = std::min(batch_size_, ds_->size() - cursor_);
  std::vector<std::int64_t> rows(order_.begin() + cursor_, order_.begin() + cursor_ + take);
  cursor_ += take;
  auto [bx, by] = ds_->batch(rows);
  x = bx;
  y = std::move(by);
  return true;
}

void BatchIterator::advance_epoch() {
  ++epoch_;
  reshuffle();
}

std::int64_t BatchIterator::batches_per_epoch() const {
  return (ds_->size() + batch_size_ - 1) / batch_size_;
}

}  // namespace oatlab
