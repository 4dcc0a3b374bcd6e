#include "oatlab/config.hpp"

#include <fstream>
#include <sstream>

#include "oatlab/rng.hpp"

namespace oatlab {

namespace {

struct KeyDoc {
  const char* key;
  const char* value;
  const char* doc;
};

// Attack constants follow the standard 8/255 budget with 2/255 steps.
const KeyDoc kDefaults[] = {
    {"mode", "oat", "standard | pgd_at | oat | pgd_ats | oats"},
    {"bn", "dual", "dual | normal (normal is the single-BN ablation)"},
    {"lambda", "1.0", "fixed trade-off weight for pgd_at / pgd_ats"},
    {"lambda_set", "0,0.1,0.2,0.3,0.4,1", "sampling support for oat / oats"},
    {"widths", "1", "width factors; oats/pgd_ats need at least two"},
    {"encoder", "ro", "lambda encoding: none | dct | ro"},
    {"encode_dim", "128", "encoding dimension d"},
    {"attack", "pgd", "training/eval attack: fgsm | pgd | mifgsm"},
    {"epsilon", "0.0313725490196078431", "L-inf budget (8/255)"},
    {"attack_steps", "7", "attack iterations n"},
    {"attack_step_size", "0.00784313725490196078", "per-iteration step (2/255)"},
    {"mu", "1.0", "MI-FGSM momentum decay"},
    {"random_start", "1", "PGD uniform random start"},
    {"epochs", "30", "training epochs"},
    {"batch_size", "128", "minibatch size"},
    {"lr", "0.05", "base learning rate (cosine-annealed to 0)"},
    {"momentum", "0.9", "SGD momentum"},
    {"weight_decay", "0.0005", "L2 weight decay"},
    {"seed", "1", "run seed"},
    {"max_steps", "0", "step cap T; 0 derives epochs * batches"},
    {"dataset", "synth", "synth | idx"},
    {"n_per_class", "600", "synth: training images per class"},
    {"test_per_class", "200", "synth: test images per class"},
    {"classes", "10", "class count (synth supports up to 10)"},
    {"image_size", "16", "synth image edge length"},
    {"noise_sigma", "0.15", "synth additive Gaussian noise"},
    {"idx_images", "", "idx: training image file"},
    {"idx_labels", "", "idx: training label file"},
    {"idx_test_images", "", "idx: test image file"},
    {"idx_test_labels", "", "idx: test label file"},
    {"out", "model.ckpt", "checkpoint output path"},
    {"log", "train_log.csv", "per-epoch metrics CSV"},
};

void apply(std::map<std::string, std::string>& values, const std::string& key,
           const std::string& value, const std::string& where) {
  if (values.find(key) == values.end())
    throw ConfigError(where + ": unknown configuration key '" + key + "'");
  values[key] = value;
}

void apply_line(std::map<std::string, std::string>& values, std::string line,
                const std::string& where) {
  const auto hash = line.find('#');
  if (hash != std::string::npos) line.erase(hash);
  const auto first = line.find_first_not_of(" \t\r");
  if (first == std::string::npos) return;
  const auto last = line.find_last_not_of(" \t\r");
  line = line.substr(first, last - first + 1);
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + line + "'");
  std::string key = line.substr(0, eq);
  std::string value = line.substr(eq + 1);
  const auto ktrim = key.find_last_not_of(" \t");
  key = key.substr(0, ktrim + 1);
  const auto vtrim = value.find_first_not_of(" \t");
  value = vtrim == std::string::npos ? "" : value.substr(vtrim);
  apply(values, key, value, where);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  for (const auto& d : kDefaults) cfg.values[d.key] = d.value;
  return cfg;
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = defaults();
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    apply_line(cfg.values, line, path + ":" + std::to_string(lineno));
  }
  for (const auto& o : overrides) apply_line(cfg.values, o, "override");
  return cfg;
}

RunConfig RunConfig::from_overrides(const std::vector<std::string>& overrides) {
  RunConfig cfg = defaults();
  for (const auto& o : overrides) apply_line(cfg.values, o, "override");
  return cfg;
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  try {
    return std::stod(str(key));
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' is not a number: '" + str(key) + "'");
  }
}

std::int64_t RunConfig::integer(const std::string& key) const {
  try {
    return std::stoll(str(key));
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' is not an integer: '" + str(key) + "'");
  }
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError("key '" + key + "' is not a flag: '" + v + "'");
}

std::vector<double> RunConfig::real_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(str(key));
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stod(item));
  if (out.empty()) throw ConfigError("key '" + key + "' is an empty list");
  return out;
}

TrainMode RunConfig::mode() const {
  const std::string& m = str("mode");
  if (m == "standard") return TrainMode::standard;
  if (m == "pgd_at") return TrainMode::pgd_at;
  if (m == "oat") return TrainMode::oat;
  if (m == "pgd_ats") return TrainMode::pgd_ats;
  if (m == "oats") return TrainMode::oats;
  throw ConfigError("unknown mode '" + m + "'");
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.mode = mode();
  t.bn_style = str("bn") == "dual" ? BnStyle::dual : BnStyle::normal;
  if (str("bn") != "dual" && str("bn") != "normal")
    throw ConfigError("bn must be dual or normal");
  t.lambda_dist = LambdaDistribution::uniform(real_list("lambda_set"));
  t.lambda_fixed = real("lambda");
  t.width_list = real_list("widths");

  const std::string& atk = str("attack");
  if (atk == "fgsm") t.attack.kind = AttackKind::fgsm;
  else if (atk == "pgd") t.attack.kind = AttackKind::pgd;
  else if (atk == "mifgsm") t.attack.kind = AttackKind::mifgsm;
  else throw ConfigError("unknown attack '" + atk + "'");
  t.attack.epsilon = real("epsilon");
  t.attack.iters = static_cast<int>(integer("attack_steps"));
  t.attack.step = real("attack_step_size");
  t.attack.mu = real("mu");
  t.attack.random_start = flag("random_start");

  t.epochs = static_cast<int>(integer("epochs"));
  t.batch_size = integer("batch_size");
  t.lr = real("lr");
  t.momentum = real("momentum");
  t.weight_decay = real("weight_decay");
  t.seed = static_cast<std::uint64_t>(integer("seed"));
  t.max_steps = integer("max_steps");
  t.validate();
  return t;
}

ModelSpec RunConfig::model_spec() const {
  ModelSpec spec;
  spec.image_size = static_cast<int>(integer("image_size"));
  spec.classes = static_cast<int>(integer("classes"));
  const TrainMode m = mode();
  spec.conditional = m == TrainMode::oat || m == TrainMode::oats;
  spec.bn_style = spec.conditional && str("bn") == "dual" ? BnStyle::dual : BnStyle::normal;
  spec.widths = real_list("widths");
  const std::string& enc = str("encoder");
  if (enc == "none") spec.encoder = EncoderScheme::none;
  else if (enc == "dct") spec.encoder = EncoderScheme::dct;
  else if (enc == "ro") spec.encoder = EncoderScheme::ro;
  else throw ConfigError("unknown encoder '" + enc + "'");
  spec.encode_dim = static_cast<int>(integer("encode_dim"));
  spec.lambda_grid = real_list("lambda_set");
  return spec;
}

Dataset RunConfig::train_dataset() const {
  if (str("dataset") == "synth")
    return synth_glyphs(static_cast<int>(integer("n_per_class")),
                        static_cast<int>(integer("classes")),
                        static_cast<int>(integer("image_size")), real("noise_sigma"),
                        derive_seed(static_cast<std::uint64_t>(integer("seed")), 0x7472ULL),
                        "train");
  if (str("dataset") == "idx") return load_idx(str("idx_images"), str("idx_labels"));
  throw ConfigError("unknown dataset '" + str("dataset") + "'");
}

Dataset RunConfig::test_dataset() const {
  if (str("dataset") == "synth")
    return synth_glyphs(static_cast<int>(integer("test_per_class")),
                        static_cast<int>(integer("classes")),
                        static_cast<int>(integer("image_size")), real("noise_sigma"),
                        derive_seed(static_cast<std::uint64_t>(integer("seed")), 0x7465ULL),
                        "test");
  if (str("dataset") == "idx") return load_idx(str("idx_test_images"), str("idx_test_labels"));
  throw ConfigError("unknown dataset '" + str("dataset") + "'");
}

std::string RunConfig::documented_defaults() {
  std::string out;
  for (const auto& d : kDefaults) {
    out += d.key;
    out += "=";
    out += d.value;
    std::size_t pad = 34;
    const std::size_t used = std::string(d.key).size() + 1 + std::string(d.value).size();
    out += std::string(used < pad ? pad - used : 1, ' ');
    out += "# ";
    out += d.doc;
    out += "\n";
  }
  return out;
}

}  // namespace oatlab
