// Scratch calibration harness (temporary).
#include <chrono>
#include <cstdio>
#include <string>

#include "oatlab/data.hpp"
#include "oatlab/eval.hpp"
#include "oatlab/model.hpp"
#include "oatlab/training.hpp"

using namespace oatlab;

int main(int argc, char** argv) {
  const int n_per_class = argc > 1 ? std::atoi(argv[1]) : 600;
  const int epochs = argc > 2 ? std::atoi(argv[2]) : 3;
  const double lam = argc > 3 ? std::atof(argv[3]) : 1.0;
  const double lr = argc > 4 ? std::atof(argv[4]) : 0.05;
  const double sigma = argc > 5 ? std::atof(argv[5]) : 0.15;

  Dataset train = synth_glyphs(n_per_class, 10, 16, sigma, 1, "train");
  Dataset test = synth_glyphs(200, 10, 16, sigma, 2, "test");

  ModelSpec spec;
  spec.conditional = false;
  spec.bn_style = BnStyle::normal;
  ConditionalNet net(spec, 7);

  TrainConfig cfg;
  cfg.mode = lam == 0.0 ? TrainMode::standard : TrainMode::pgd_at;
  cfg.lambda_fixed = lam;
  cfg.epochs = epochs;
  cfg.lr = lr;
  cfg.seed = 7;

  const std::int64_t spe = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  Trainer trainer(net, cfg, spe);

  auto t0 = std::chrono::steady_clock::now();
  trainer.run(train);
  auto t1 = std::chrono::steady_clock::now();
  const double secs = std::chrono::duration<double>(t1 - t0).count();

  AttackSpec atk;  // pgd-7 defaults
  const double sa = eval_sa(net, test, lam, 1.0);
  auto t2 = std::chrono::steady_clock::now();
  const double ra = eval_ra(net, test, lam, 1.0, atk, 99);
  auto t3 = std::chrono::steady_clock::now();

  std::printf("n/class=%d epochs=%d lambda=%.2f lr=%.3f sigma=%.2f | train %.1fs (%.2fs/epoch) | SA %.2f RA %.2f | ra-eval %.1fs\n",
              n_per_class, epochs, lam, lr, sigma, secs, secs / epochs, sa, ra,
              std::chrono::duration<double>(t3 - t2).count());
  return 0;
}
