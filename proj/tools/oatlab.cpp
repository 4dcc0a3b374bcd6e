#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "oatlab/checkpoint.hpp"
#include "oatlab/config.hpp"
#include "oatlab/eval.hpp"
#include "oatlab/rng.hpp"
#include "oatlab/training.hpp"

using namespace oatlab;

namespace {

RunConfig config_from_checkpoint(const Checkpoint& ck,
                                 const std::vector<std::string>& overrides) {
  std::vector<std::string> pairs;
  for (const auto& [k, v] : ck.header)
    if (k.rfind("cfg.", 0) == 0) pairs.push_back(k.substr(4) + "=" + v);
  for (const auto& o : overrides) pairs.push_back(o);
  return RunConfig::from_overrides(pairs);
}

AttackSpec eval_attack(const std::string& name, const RunConfig& cfg) {
  AttackSpec atk;
  atk.epsilon = cfg.real("epsilon");
  atk.random_start = cfg.flag("random_start");
  if (name == "pgd") {
    atk.kind = AttackKind::pgd;
    atk.iters = static_cast<int>(cfg.integer("attack_steps"));
    atk.step = cfg.real("attack_step_size");
  } else if (name == "pgd20") {
    atk.kind = AttackKind::pgd;
    atk.iters = 20;
    atk.step = cfg.real("attack_step_size");
  } else if (name == "fgsm") {
    atk.kind = AttackKind::fgsm;
  } else if (name == "mifgsm") {
    atk.kind = AttackKind::mifgsm;
    atk.iters = 10;
    atk.mu = cfg.real("mu");
  } else {
    throw ConfigError("unknown evaluation attack '" + name + "' (pgd|pgd20|fgsm|mifgsm)");
  }
  return atk;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error(path + ": write failed");
}

void write_pgm(const std::string& path, const std::vector<unsigned char>& pixels, int w, int h) {
  std::string buf = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  buf.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  write_file(path, buf);
}

// Min-max normalization to [0,255]; a flat map degenerates to mid-gray.
std::vector<unsigned char> normalize_map(const std::vector<double>& v) {
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  std::vector<unsigned char> out(v.size());
  if (hi - lo < 1e-12) {
    std::fill(out.begin(), out.end(), static_cast<unsigned char>(128));
    return out;
  }
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = static_cast<unsigned char>(std::lround(255.0 * (v[i] - lo) / (hi - lo)));
  return out;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig::from_overrides(overrides)
                                      : RunConfig::load(config_path, overrides);
  const Dataset train = cfg.train_dataset();
  ConditionalNet net(cfg.model_spec(), static_cast<std::uint64_t>(cfg.integer("seed")));
  TrainConfig tc = cfg.train_config();
  const std::int64_t spe = (train.size() + tc.batch_size - 1) / tc.batch_size;
  Trainer trainer(net, tc, spe);

  std::string log = "epoch,steps,lr,loss,l_c,l_a,bn_c,bn_a\n";
  double loss = 0, lc = 0, la = 0, lr = 0;
  std::int64_t n = 0, bnc = 0, bna = 0, epoch = 0;
  char line[200];
  const auto flush_epoch = [&] {
    if (n == 0) return;
    std::snprintf(line, sizeof(line), "%lld,%lld,%.6g,%.6f,%.6f,%.6f,%lld,%lld\n",
                  static_cast<long long>(epoch), static_cast<long long>(n), lr / static_cast<double>(n),
                  loss / static_cast<double>(n), lc / static_cast<double>(n),
                  la / static_cast<double>(n), static_cast<long long>(bnc),
                  static_cast<long long>(bna));
    log += line;
    std::fputs(line, stdout);
    loss = lc = la = lr = 0;
    n = bnc = bna = 0;
    ++epoch;
  };
  std::int64_t step_in_epoch = 0;
  trainer.run(train, [&](const StepReport& r) {
    loss += r.loss;
    lc += r.l_c;
    la += r.l_a;
    lr += r.lr;
    bnc += r.bn_c_count;
    bna += r.bn_a_count;
    ++n;
    if (++step_in_epoch == spe) {
      flush_epoch();
      step_in_epoch = 0;
    }
  });
  flush_epoch();
  write_file(cfg.str("log"), log);

  std::map<std::string, std::string> snapshot;
  for (const auto& [k, v] : cfg.values) snapshot["cfg." + k] = v;
  Checkpoint ck = Checkpoint::capture(net, snapshot, tc.seed, trainer.optimizer().step_count);
  ck.save(cfg.str("out"));
  std::printf("wrote %s (%lld steps) and %s\n", cfg.str("out").c_str(),
              static_cast<long long>(trainer.optimizer().step_count), cfg.str("log").c_str());
  return 0;
}

int cmd_sweep(const std::string& ckpt_path, std::string lambdas, std::string widths,
              const std::string& attack_name, const std::string& out_path, std::uint64_t seed,
              const std::vector<std::string>& overrides) {
  const Checkpoint ck = Checkpoint::load(ckpt_path);
  RunConfig cfg = config_from_checkpoint(ck, overrides);
  ConditionalNet net = ck.restore();

  if (lambdas.empty()) lambdas = cfg.str("lambda_set");
  if (widths.empty()) widths = cfg.str("widths");
  RunConfig lists = RunConfig::from_overrides(
      {std::string("lambda_set=") + lambdas, std::string("widths=") + widths});

  const Dataset test = cfg.test_dataset();
  const AttackSpec atk = eval_attack(attack_name, cfg);
  const auto points = sweep_tradeoff(net, test, lists.real_list("lambda_set"),
                                     lists.real_list("widths"), atk, seed);
  const std::string csv = tradeoff_csv(points);
  if (out_path.empty())
    std::fputs(csv.c_str(), stdout);
  else
    write_file(out_path, csv);
  return 0;
}

int cmd_saliency(const std::string& ckpt_path, const std::string& lambdas, std::int64_t count,
                 const std::string& out_dir, const std::vector<std::string>& overrides) {
  const Checkpoint ck = Checkpoint::load(ckpt_path);
  RunConfig cfg = config_from_checkpoint(ck, overrides);
  ConditionalNet net = ck.restore();
  const Dataset test = cfg.test_dataset();
  if (count > test.size()) throw std::runtime_error("saliency: count exceeds test set size");
  const std::vector<double> lams =
      RunConfig::from_overrides({"lambda_set=" + (lambdas.empty() ? cfg.str("lambda_set") : lambdas)})
          .real_list("lambda_set");

  const int h = static_cast<int>(test.images.dim(2));
  const int w = static_cast<int>(test.images.dim(3));
  char name[512];
  for (std::int64_t i = 0; i < count; ++i) {
    auto [x, y] = test.batch({i});
    std::vector<unsigned char> orig(static_cast<std::size_t>(h * w));
    for (std::size_t p = 0; p < orig.size(); ++p)
      orig[p] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(x.data()[p], 0.0, 1.0)));
    std::snprintf(name, sizeof(name), "%s/orig_%03lld.pgm", out_dir.c_str(),
                  static_cast<long long>(i));
    write_pgm(name, orig, w, h);
    for (double lam : lams) {
      const SaliencyMap map = jacobian_saliency(net, x, y[0], lam);
      std::snprintf(name, sizeof(name), "%s/saliency_%03lld_lambda%g.pgm", out_dir.c_str(),
                    static_cast<long long>(i), lam);
      write_pgm(name, normalize_map(map.values.data()), w, h);
    }
  }
  std::printf("wrote %lld originals and %lld maps to %s\n", static_cast<long long>(count),
              static_cast<long long>(count * static_cast<std::int64_t>(lams.size())),
              out_dir.c_str());
  return 0;
}

int cmd_stats_export(const std::string& ckpt_path, const std::string& out_path) {
  const Checkpoint ck = Checkpoint::load(ckpt_path);
  ConditionalNet net = ck.restore();
  const ModelSpec& spec = net.spec();

  std::string csv = "layer,width,branch,channel,mean,var\n";
  char line[160];
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    NormSite& site = net.norm_site(l);
    for (std::size_t wi = 0; wi < spec.widths.size(); ++wi) {
      const auto emit = [&](const char* branch, const BatchNormState& bn) {
        for (std::int64_t c = 0; c < bn.channels(); ++c) {
          std::snprintf(line, sizeof(line), "%zu,%g,%s,%lld,%.9g,%.9g\n", l, spec.widths[wi],
                        branch, static_cast<long long>(c),
                        bn.running_mean[static_cast<std::size_t>(c)],
                        bn.running_var[static_cast<std::size_t>(c)]);
          csv += line;
        }
      };
      if (spec.bn_style == BnStyle::dual) {
        emit("c", site.dual[wi].bn_c);
        emit("a", site.dual[wi].bn_a);
      } else {
        emit("-", site.single[wi]);
      }
    }
  }
  if (out_path.empty())
    std::fputs(csv.c_str(), stdout);
  else
    write_file(out_path, csv);
  return 0;
}

int cmd_flops(const std::string& ckpt_path, const std::vector<std::string>& overrides) {
  ModelSpec spec;
  if (!ckpt_path.empty()) {
    const Checkpoint ck = Checkpoint::load(ckpt_path);
    spec = model_spec_from_header(ck.header);
  } else {
    spec = RunConfig::from_overrides(overrides).model_spec();
  }
  std::printf("width,total_madds,film_madds,film_overhead_pct\n");
  for (double w : spec.widths) {
    const std::int64_t total = flops_count(spec, w);
    const std::int64_t film = film_flops(spec, w);
    std::printf("%g,%lld,%lld,%.3f\n", w, static_cast<long long>(total),
                static_cast<long long>(film),
                100.0 * static_cast<double>(film) / static_cast<double>(total - film));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adjustable adversarial-training laboratory"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, lambdas, widths, attack_name = "pgd", out_path, out_dir = ".";
  std::vector<std::string> overrides;
  std::int64_t count = 8;
  std::uint64_t seed = 1;

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("-c,--config", config_path, "key=value config file");
  train->add_option("--set", overrides, "override: key=value (repeatable)");
  bool show_defaults = false;
  train->add_flag("--defaults", show_defaults, "print all keys with defaults and exit");

  auto* sweep = app.add_subcommand("sweep", "Evaluate SA/RA over (lambda, width) pairs");
  sweep->add_option("checkpoint", ckpt_path, "trained checkpoint")->required();
  sweep->add_option("--lambdas", lambdas, "comma list (default: training lambda_set)");
  sweep->add_option("--widths", widths, "comma list (default: training widths)");
  sweep->add_option("--attack", attack_name, "pgd | pgd20 | fgsm | mifgsm");
  sweep->add_option("-o,--out", out_path, "CSV path (default: stdout)");
  sweep->add_option("--seed", seed, "random-start seed, fixed per sweep");
  sweep->add_option("--set", overrides, "config override: key=value");

  auto* sal = app.add_subcommand("saliency", "Export input-gradient maps as PGM");
  sal->add_option("checkpoint", ckpt_path, "trained checkpoint")->required();
  sal->add_option("--lambdas", lambdas, "comma list (default: training lambda_set)");
  sal->add_option("--count", count, "number of test images");
  sal->add_option("-o,--out-dir", out_dir, "output directory");
  sal->add_option("--set", overrides, "config override: key=value");

  auto* stats = app.add_subcommand("stats-export", "Dump BN running statistics per branch");
  stats->add_option("checkpoint", ckpt_path, "trained checkpoint")->required();
  stats->add_option("-o,--out", out_path, "CSV path (default: stdout)");

  auto* flops = app.add_subcommand("flops", "Analytic multiply-add counts per width");
  flops->add_option("checkpoint", ckpt_path, "trained checkpoint (optional)");
  flops->add_option("--set", overrides, "config override: key=value");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      if (show_defaults) {
        std::fputs(RunConfig::documented_defaults().c_str(), stdout);
        return 0;
      }
      return cmd_train(config_path, overrides);
    }
    if (sweep->parsed())
      return cmd_sweep(ckpt_path, lambdas, widths, attack_name, out_path, seed, overrides);
    if (sal->parsed()) return cmd_saliency(ckpt_path, lambdas, count, out_dir, overrides);
    if (stats->parsed()) return cmd_stats_export(ckpt_path, out_path);
    if (flops->parsed()) return cmd_flops(ckpt_path, overrides);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
