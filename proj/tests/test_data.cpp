#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "oatlab/data.hpp"
#include "oatlab/eval.hpp"
#include "oatlab/model.hpp"
#include "oatlab/rng.hpp"
#include "oatlab/training.hpp"

using namespace oatlab;

namespace {

std::string tmp_path(const std::string& name) { return "/tmp/oatlab_test_" + name; }

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

// 2 images of 2x2 with labels {3, 7}.
void write_valid_idx(const std::string& imgs, const std::string& labels) {
  std::vector<unsigned char> ib;
  push_be32(ib, 2051);
  push_be32(ib, 2);
  push_be32(ib, 2);
  push_be32(ib, 2);
  for (unsigned char p : {0, 64, 128, 255, 10, 20, 30, 40}) ib.push_back(p);
  write_bytes(imgs, ib);

  std::vector<unsigned char> lb;
  push_be32(lb, 2049);
  push_be32(lb, 2);
  lb.push_back(3);
  lb.push_back(7);
  write_bytes(labels, lb);
}

}  // namespace

TEST_CASE("synth_glyphs: deterministic, in range, labeled per class") {
  Dataset a = synth_glyphs(5, 10, 16, 0.3, 42);
  Dataset b = synth_glyphs(5, 10, 16, 0.3, 42);
  CHECK(a.images.data() == b.images.data());
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 50);
  CHECK(a.images.shape() == Shape{50, 1, 16, 16});

  for (double v : a.images.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  Dataset noisy = synth_glyphs(3, 10, 16, 5.0, 7);
  for (double v : noisy.images.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  Dataset c = synth_glyphs(5, 10, 16, 0.3, 43);
  CHECK(a.images.data() != c.images.data());

  for (std::size_t i = 0; i < a.labels.size(); ++i)
    CHECK(a.labels[i] == static_cast<int>(i / 5));

  CHECK_THROWS(synth_glyphs(5, 10, 7, 0.1, 1));
  CHECK_THROWS(synth_glyphs(0, 10, 16, 0.1, 1));
  CHECK_THROWS(synth_glyphs(5, 11, 16, 0.1, 1));
}

TEST_CASE("synth_glyphs: noiseless task is learned to 100% by a standard run") {
  Dataset train = synth_glyphs(40, 10, 16, 0.0, 5, "train");
  Dataset test = synth_glyphs(15, 10, 16, 0.0, 6, "test");

  ModelSpec spec;
  spec.conditional = false;
  spec.bn_style = BnStyle::normal;
  ConditionalNet net(spec, 3);

  TrainConfig cfg;
  cfg.mode = TrainMode::standard;
  cfg.epochs = 25;
  cfg.batch_size = 64;
  cfg.lr = 0.1;
  cfg.seed = 3;
  Trainer trainer(net, cfg, (train.size() + cfg.batch_size - 1) / cfg.batch_size);
  trainer.run(train);

  CHECK(eval_sa(net, test, 0.0, 1.0) == 100.0);
}

TEST_CASE("load_idx: accepts the fixed magics and scales pixels by 255") {
  const std::string imgs = tmp_path("idx_images"), labels = tmp_path("idx_labels");
  write_valid_idx(imgs, labels);

  Dataset ds = load_idx(imgs, labels);
  CHECK(ds.size() == 2);
  CHECK(ds.images.shape() == Shape{2, 1, 2, 2});
  CHECK(ds.labels == std::vector<int>{3, 7});
  CHECK(ds.images.data()[3] == 1.0);  // byte 255
  CHECK(ds.images.data()[0] == 0.0);
  CHECK(ds.images.data()[1] == doctest::Approx(64.0 / 255.0));

  std::remove(imgs.c_str());
  std::remove(labels.c_str());
}

TEST_CASE("load_idx: structured errors for bad magic, truncation, count mismatch") {
  const std::string imgs = tmp_path("idx_bad_images"), labels = tmp_path("idx_bad_labels");
  write_valid_idx(imgs, labels);

  {
    std::vector<unsigned char> bad;
    push_be32(bad, 2052);
    push_be32(bad, 1);
    push_be32(bad, 2);
    push_be32(bad, 2);
    write_bytes(tmp_path("idx_wrong_magic"), bad);
    CHECK_THROWS_WITH_AS(load_idx(tmp_path("idx_wrong_magic"), labels),
                         doctest::Contains("2051"), IdxError);
  }
  {
    std::vector<unsigned char> trunc;
    push_be32(trunc, 2051);
    push_be32(trunc, 2);
    push_be32(trunc, 2);
    push_be32(trunc, 2);
    trunc.push_back(1);  // payload needs 8 bytes, provide 1
    write_bytes(tmp_path("idx_trunc"), trunc);
    CHECK_THROWS_WITH_AS(load_idx(tmp_path("idx_trunc"), labels),
                         doctest::Contains("byte offset"), IdxError);
  }
  {
    std::vector<unsigned char> lb;
    push_be32(lb, 2049);
    push_be32(lb, 3);
    lb.insert(lb.end(), {1, 2, 3});
    write_bytes(tmp_path("idx_count"), lb);
    CHECK_THROWS_WITH_AS(load_idx(imgs, tmp_path("idx_count")),
                         doctest::Contains("mismatch"), IdxError);
  }
  for (const char* n : {"idx_wrong_magic", "idx_trunc", "idx_count"})
    std::remove(tmp_path(n).c_str());
  std::remove(imgs.c_str());
  std::remove(labels.c_str());
}

TEST_CASE("BatchIterator: partition arithmetic and epoch coverage") {
  Dataset ds = synth_glyphs(1, 10, 16, 0.1, 9);  // N = 10
  BatchIterator it(ds, 4, 123);
  CHECK(it.batches_per_epoch() == 3);

  Tensor x;
  std::vector<int> y;
  std::vector<std::size_t> sizes;
  std::multiset<int> seen;
  while (it.next(x, y)) {
    sizes.push_back(y.size());
    for (int v : y) seen.insert(v);
  }
  CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
  CHECK(seen.size() == 10);
  // Every label appears exactly once per epoch on this one-per-class set.
  for (int c = 0; c < 10; ++c) CHECK(seen.count(c) == 1);
}

TEST_CASE("BatchIterator: determinism and permutation property over random cases") {
  std::mt19937_64 meta(77);
  for (int trial = 0; trial < 20; ++trial) {
    const int n_per = 1 + static_cast<int>(rand_below(meta, 8));
    const std::int64_t batch = 1 + static_cast<std::int64_t>(rand_below(meta, 17));
    const std::uint64_t seed = meta();
    Dataset ds = synth_glyphs(n_per, 10, 16, 0.05, 11);

    BatchIterator a(ds, batch, seed), b(ds, batch, seed);
    Tensor xa, xb;
    std::vector<int> ya, yb;
    std::int64_t visited = 0;
    while (a.next(xa, ya)) {
      REQUIRE(b.next(xb, yb));
      CHECK(ya == yb);
      CHECK(xa.data() == xb.data());
      visited += static_cast<std::int64_t>(ya.size());
    }
    CHECK_FALSE(b.next(xb, yb));
    CHECK(visited == ds.size());

    // Epochs permute differently but stay permutations.
    a.advance_epoch();
    std::int64_t visited2 = 0;
    while (a.next(xa, ya)) visited2 += static_cast<std::int64_t>(ya.size());
    CHECK(visited2 == ds.size());
  }
}
