#pragma once

#include <map>
#include <string>
#include <vector>

#include "oatlab/model.hpp"
#include "oatlab/training.hpp"

namespace oatlab {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to reconstruct a trained model: config snapshot, lambda
/// grid and encoder dictionary, named parameters, named running statistics,
/// RNG seed and step counter. save -> load -> save is byte-identical.
///
/// File layout: ASCII magic "OATCKPT1", u64 LE header length, header as
/// key=value text, then per-tensor records (u32 LE name length, name bytes,
/// u8 dtype code, u8 ndim, u32 LE extents, raw little-endian payload).
struct Checkpoint {
  std::map<std::string, std::string> header;  // config snapshot
  std::uint64_t seed = 0;
  std::int64_t step_count = 0;

  struct Record {
    Shape shape;
    std::vector<double> values;
    std::uint8_t dtype = 1;  // 1 = f32 payload, 2 = f64
  };
  std::vector<std::pair<std::string, Record>> tensors;  // saved order preserved

  static Checkpoint capture(ConditionalNet& net, const std::map<std::string, std::string>& config,
                            std::uint64_t seed, std::int64_t step_count);

  /// Rebuilds the model described by the header and installs every tensor,
  /// validating shapes against the reconstructed spec.
  ConditionalNet restore() const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

/// ModelSpec <-> header round trip used by the checkpoint and the CLI.
std::map<std::string, std::string> model_spec_to_header(const ModelSpec& spec);
ModelSpec model_spec_from_header(const std::map<std::string, std::string>& header);

}  // namespace oatlab
