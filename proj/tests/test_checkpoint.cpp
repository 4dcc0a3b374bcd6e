#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "oatlab/checkpoint.hpp"
#include "oatlab/config.hpp"
#include "oatlab/data.hpp"
#include "oatlab/eval.hpp"
#include "oatlab/training.hpp"

using namespace oatlab;

namespace {

std::string tmp(const std::string& name) { return "/tmp/oatlab_ckpt_" + name; }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// A briefly-trained conditional model with moved statistics.
ConditionalNet trained_net(std::uint64_t seed) {
  Dataset train = synth_glyphs(6, 10, 16, 0.2, seed);
  ModelSpec spec;
  spec.widths = {0.5, 1.0};
  ConditionalNet net(spec, seed);
  TrainConfig cfg;
  cfg.mode = TrainMode::oats;
  cfg.width_list = {0.5, 1.0};
  cfg.epochs = 1;
  cfg.batch_size = 20;
  cfg.seed = seed;
  cfg.attack.iters = 2;
  Trainer trainer(net, cfg, 3);
  trainer.run(train);
  return net;
}

}  // namespace

TEST_CASE("checkpoint: save -> load -> save is byte-identical") {
  ConditionalNet net = trained_net(51);
  Checkpoint ck = Checkpoint::capture(net, {{"cfg.note", "roundtrip"}}, 51, 3);
  ck.save(tmp("a"));
  Checkpoint loaded = Checkpoint::load(tmp("a"));
  loaded.save(tmp("b"));
  CHECK(slurp(tmp("a")) == slurp(tmp("b")));
  CHECK(loaded.header.at("cfg.note") == "roundtrip");
  CHECK(loaded.seed == 51);
  CHECK(loaded.step_count == 3);
  std::remove(tmp("a").c_str());
  std::remove(tmp("b").c_str());
}

TEST_CASE("checkpoint: restore reproduces parameters, statistics, encoder bitwise") {
  ConditionalNet net = trained_net(53);
  Checkpoint ck = Checkpoint::capture(net, {}, 53, 3);
  ck.save(tmp("restore"));
  ConditionalNet back = Checkpoint::load(tmp("restore")).restore();

  auto pa = net.parameters();
  auto pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.data() == pb[i].second.data());
  }
  auto sa = net.running_stats();
  auto sb = back.running_stats();
  REQUIRE(sa.size() == sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(*sa[i].second == *sb[i].second);
  CHECK(net.encoder().matrix == back.encoder().matrix);
  CHECK(net.encoder().lambda_grid == back.encoder().lambda_grid);
  std::remove(tmp("restore").c_str());
}

TEST_CASE("checkpoint: a loaded model reproduces the pre-save sweep CSV exactly") {
  ConditionalNet net = trained_net(57);
  Dataset test = synth_glyphs(3, 10, 16, 0.2, 99);
  AttackSpec atk;
  atk.iters = 2;
  const std::string before =
      tradeoff_csv(sweep_tradeoff(net, test, {0.0, 0.3, 1.0}, {0.5, 1.0}, atk, 7));

  Checkpoint::capture(net, {}, 57, 3).save(tmp("sweep"));
  ConditionalNet back = Checkpoint::load(tmp("sweep")).restore();
  const std::string after =
      tradeoff_csv(sweep_tradeoff(back, test, {0.0, 0.3, 1.0}, {0.5, 1.0}, atk, 7));
  CHECK(before == after);
  std::remove(tmp("sweep").c_str());
}

TEST_CASE("checkpoint: corrupted magic and mismatched shapes are rejected") {
  ConditionalNet net = trained_net(59);
  Checkpoint ck = Checkpoint::capture(net, {}, 59, 1);
  ck.save(tmp("bad"));

  {
    std::string bytes = slurp(tmp("bad"));
    bytes[0] = 'X';
    std::ofstream out(tmp("bad_magic"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(Checkpoint::load(tmp("bad_magic")), doctest::Contains("OATCKPT1"),
                       CheckpointError);

  {
    std::string bytes = slurp(tmp("bad"));
    bytes.resize(bytes.size() - 3);
    std::ofstream out(tmp("truncated"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(Checkpoint::load(tmp("truncated")), doctest::Contains("truncated"),
                       CheckpointError);

  {
    Checkpoint tampered = Checkpoint::load(tmp("bad"));
    tampered.header["model.conv_channels"] = "16,24";
    CHECK_THROWS_AS(tampered.restore(), CheckpointError);
  }
  {
    Checkpoint extra = Checkpoint::load(tmp("bad"));
    extra.tensors.emplace_back("mystery", Checkpoint::Record{{2}, {1.0, 2.0}, 1});
    CHECK_THROWS_WITH_AS(extra.restore(), doctest::Contains("unrecognized"), CheckpointError);
  }
  for (const char* n : {"bad", "bad_magic", "truncated"}) std::remove(tmp(n).c_str());
}

TEST_CASE("run config: defaults, file parsing, unknown keys, typed access") {
  RunConfig cfg = RunConfig::defaults();
  CHECK(cfg.str("mode") == "oat");
  CHECK(cfg.real("epsilon") == doctest::Approx(8.0 / 255.0).epsilon(1e-12));
  CHECK(cfg.integer("attack_steps") == 7);
  CHECK(cfg.real("momentum") == 0.9);
  CHECK(cfg.real("weight_decay") == 5e-4);
  CHECK(cfg.str("encoder") == "ro");
  CHECK(cfg.integer("encode_dim") == 128);
  CHECK(cfg.real_list("lambda_set") == std::vector<double>{0.0, 0.1, 0.2, 0.3, 0.4, 1.0});

  {
    std::ofstream out(tmp("cfg"));
    out << "# comment line\n"
        << "mode = pgd_at   # trailing comment\n"
        << "lambda=0.3\n"
        << "\n"
        << "epochs=2\n";
  }
  RunConfig file = RunConfig::load(tmp("cfg"), {"seed=9"});
  CHECK(file.str("mode") == "pgd_at");
  CHECK(file.real("lambda") == 0.3);
  CHECK(file.integer("epochs") == 2);
  CHECK(file.integer("seed") == 9);
  std::remove(tmp("cfg").c_str());

  CHECK_THROWS_WITH_AS(RunConfig::from_overrides({"no_such_key=1"}),
                       doctest::Contains("no_such_key"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_overrides({"garbage"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::defaults().real("mode"), ConfigError);

  // Every documented key round-trips through the loader.
  const std::string docs = RunConfig::documented_defaults();
  CHECK(docs.find("epsilon=") != std::string::npos);
  CHECK(docs.find("# ") != std::string::npos);
}

TEST_CASE("run config: model spec and train config derivation") {
  RunConfig cfg = RunConfig::from_overrides(
      {"mode=oats", "widths=0.5,0.75,1", "encoder=dct", "encode_dim=16", "bn=dual"});
  ModelSpec spec = cfg.model_spec();
  CHECK(spec.conditional);
  CHECK(spec.bn_style == BnStyle::dual);
  CHECK(spec.widths == std::vector<double>{0.5, 0.75, 1.0});
  CHECK(spec.encoder == EncoderScheme::dct);
  CHECK(spec.encode_dim == 16);

  TrainConfig tc = cfg.train_config();
  CHECK(tc.mode == TrainMode::oats);
  CHECK(tc.width_list.size() == 3);
  CHECK(tc.attack.kind == AttackKind::pgd);

  RunConfig base = RunConfig::from_overrides({"mode=pgd_at"});
  CHECK_FALSE(base.model_spec().conditional);
  CHECK(base.model_spec().bn_style == BnStyle::normal);
}
