#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "oatlab/attacks.hpp"
#include "oatlab/checkpoint.hpp"
#include "oatlab/config.hpp"
#include "oatlab/data.hpp"
#include "oatlab/eval.hpp"
#include "oatlab/training.hpp"

namespace py = pybind11;
using namespace oatlab;

namespace {

py::array_t<double> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor array_to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] = a.shape(i);
  std::vector<double> values(a.data(), a.data() + a.size());
  return Tensor::from_data(std::move(shape), std::move(values));
}

std::vector<std::string> dict_to_overrides(const py::dict& options) {
  std::vector<std::string> pairs;
  for (const auto& item : options)
    pairs.push_back(py::str(item.first).cast<std::string>() + "=" +
                    py::str(item.second).cast<std::string>());
  return pairs;
}

AttackSpec attack_spec(const std::string& kind, double epsilon, int steps, double step_size,
                       double mu, bool random_start) {
  AttackSpec spec;
  if (kind == "fgsm") spec.kind = AttackKind::fgsm;
  else if (kind == "pgd") spec.kind = AttackKind::pgd;
  else if (kind == "mifgsm") spec.kind = AttackKind::mifgsm;
  else throw std::invalid_argument("unknown attack kind '" + kind + "'");
  spec.epsilon = epsilon;
  spec.iters = steps;
  spec.step = step_size;
  spec.mu = mu;
  spec.random_start = random_start;
  return spec;
}

/// Checkpoint-backed model handle exposed to python.
class Model {
 public:
  explicit Model(const std::string& path)
      : ck_(Checkpoint::load(path)), net_(ck_.restore()) {}

  double sa(const Dataset& ds, double lambda, double width) {
    return eval_sa(net_, ds, lambda, width);
  }

  double ra(const Dataset& ds, double lambda, double width, const std::string& kind,
            double epsilon, int steps, double step_size, double mu, bool random_start,
            std::uint64_t seed) {
    return eval_ra(net_, ds, lambda, width,
                   attack_spec(kind, epsilon, steps, step_size, mu, random_start), seed);
  }

  py::list sweep(const Dataset& ds, const std::vector<double>& lambdas,
                 const std::vector<double>& widths, const std::string& kind, double epsilon,
                 int steps, double step_size, std::uint64_t seed) {
    const auto points = sweep_tradeoff(net_, ds, lambdas, widths,
                                       attack_spec(kind, epsilon, steps, step_size, 1.0, true),
                                       seed);
    py::list out;
    for (const auto& p : points) {
      py::dict row;
      row["lambda"] = p.lambda;
      row["width"] = p.width;
      row["sa"] = p.sa;
      row["ra"] = p.ra;
      row["attack"] = p.attack;
      row["epsilon"] = p.epsilon;
      row["steps"] = p.steps;
      row["seed"] = p.seed;
      out.append(row);
    }
    return out;
  }

  py::array_t<double> saliency(const Dataset& ds, std::int64_t index, double lambda) {
    auto [x, y] = ds.batch({index});
    return tensor_to_array(jacobian_saliency(net_, x, y[0], lambda).values);
  }

  py::array_t<double> attack_batch(
      const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
      const std::vector<int>& y, double lambda, double width, const std::string& kind,
      double epsilon, int steps, double step_size, double mu, bool random_start,
      std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor adv = run_attack(net_, array_to_tensor(x), y, lambda, width,
                            attack_spec(kind, epsilon, steps, step_size, mu, random_start), &rng);
    return tensor_to_array(adv);
  }

  std::int64_t flops(double width) { return flops_count(net_.spec(), width); }
  std::int64_t conditioning_flops(double width) { return film_flops(net_.spec(), width); }

  std::vector<double> widths() const { return net_.spec().widths; }
  std::vector<double> lambda_grid() const { return net_.spec().lambda_grid; }

 private:
  Checkpoint ck_;
  ConditionalNet net_;
};

py::dict train_run(const py::dict& options, const std::string& checkpoint_path) {
  std::vector<std::string> overrides = dict_to_overrides(options);
  overrides.push_back("out=" + checkpoint_path);
  RunConfig cfg = RunConfig::from_overrides(overrides);

  const Dataset train = cfg.train_dataset();
  ConditionalNet net(cfg.model_spec(), static_cast<std::uint64_t>(cfg.integer("seed")));
  TrainConfig tc = cfg.train_config();
  const std::int64_t spe = (train.size() + tc.batch_size - 1) / tc.batch_size;
  Trainer trainer(net, tc, spe);

  double last_loss = 0.0;
  trainer.run(train, [&](const StepReport& r) { last_loss = r.loss; });

  std::map<std::string, std::string> snapshot;
  for (const auto& [k, v] : cfg.values) snapshot["cfg." + k] = v;
  Checkpoint::capture(net, snapshot, tc.seed, trainer.optimizer().step_count)
      .save(checkpoint_path);

  py::dict summary;
  summary["steps"] = trainer.optimizer().step_count;
  summary["last_loss"] = last_loss;
  summary["checkpoint"] = checkpoint_path;
  return summary;
}

py::array_t<double> encode_lambda_py(const std::string& scheme, int dim,
                                     const std::vector<double>& grid, double lambda,
                                     std::uint64_t seed) {
  EncoderScheme s;
  if (scheme == "none") s = EncoderScheme::none;
  else if (scheme == "dct") s = EncoderScheme::dct;
  else if (scheme == "ro") s = EncoderScheme::ro;
  else throw std::invalid_argument("unknown encoder scheme '" + scheme + "'");
  const LambdaEncoder enc = LambdaEncoder::make(s, dim, grid, seed);
  const std::vector<double> v = enc.encode(lambda);
  return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adjustable adversarial-training laboratory: one model, test-time "
            "accuracy/robustness/width trade-offs.";

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("size", &Dataset::size)
      .def_readonly("classes", &Dataset::classes)
      .def_readonly("split", &Dataset::split)
      .def_property_readonly("images", [](const Dataset& ds) { return tensor_to_array(ds.images); })
      .def_property_readonly("labels", [](const Dataset& ds) { return ds.labels; })
      .def_static(
          "from_arrays",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& images,
             const std::vector<int>& labels, int classes) {
            if (images.ndim() != 4) throw std::invalid_argument("images must be [N,C,H,W]");
            Dataset ds;
            ds.images = array_to_tensor(images);
            ds.labels = labels;
            ds.classes = classes;
            ds.split = "custom";
            return ds;
          },
          py::arg("images"), py::arg("labels"), py::arg("classes"));

  m.def("synth_glyphs", &synth_glyphs, py::arg("n_per_class"), py::arg("classes") = 10,
        py::arg("size") = 16, py::arg("noise_sigma") = 0.15, py::arg("seed") = 1,
        py::arg("split") = "train");
  m.def("load_idx", &load_idx, py::arg("images_path"), py::arg("labels_path"));

  m.def("train", &train_run, py::arg("options"), py::arg("checkpoint_path"),
        "Run training per key=value options (see `oatlab train --defaults`) and "
        "write a checkpoint.");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint_path"))
      .def("sa", &Model::sa, py::arg("dataset"), py::arg("lam") = 0.0, py::arg("width") = 1.0)
      .def("ra", &Model::ra, py::arg("dataset"), py::arg("lam") = 0.0, py::arg("width") = 1.0,
           py::arg("attack") = "pgd", py::arg("epsilon") = 8.0 / 255.0, py::arg("steps") = 7,
           py::arg("step_size") = 2.0 / 255.0, py::arg("mu") = 1.0,
           py::arg("random_start") = true, py::arg("seed") = 1)
      .def("sweep", &Model::sweep, py::arg("dataset"), py::arg("lambdas"), py::arg("widths"),
           py::arg("attack") = "pgd", py::arg("epsilon") = 8.0 / 255.0, py::arg("steps") = 7,
           py::arg("step_size") = 2.0 / 255.0, py::arg("seed") = 1)
      .def("saliency", &Model::saliency, py::arg("dataset"), py::arg("index"), py::arg("lam"))
      .def("attack", &Model::attack_batch, py::arg("x"), py::arg("y"), py::arg("lam") = 1.0,
           py::arg("width") = 1.0, py::arg("attack") = "pgd", py::arg("epsilon") = 8.0 / 255.0,
           py::arg("steps") = 7, py::arg("step_size") = 2.0 / 255.0, py::arg("mu") = 1.0,
           py::arg("random_start") = true, py::arg("seed") = 1)
      .def("flops", &Model::flops, py::arg("width") = 1.0)
      .def("conditioning_flops", &Model::conditioning_flops, py::arg("width") = 1.0)
      .def_property_readonly("widths", &Model::widths)
      .def_property_readonly("lambda_grid", &Model::lambda_grid);

  m.def("encode_lambda", &encode_lambda_py, py::arg("scheme"), py::arg("dim"), py::arg("grid"),
        py::arg("lam"), py::arg("seed") = 1);

  m.def("set_precision", [](const std::string& p) {
    if (p == "f32") set_precision(Precision::f32);
    else if (p == "f64") set_precision(Precision::f64);
    else throw std::invalid_argument("precision must be f32 or f64");
  });
}
