#include "notifdt/diffcore/checkpoint.hpp"

#include <fstream>
#include <unordered_map>

#include "notifdt/common/binary_io.hpp"

namespace notifdt::diff {

namespace {
constexpr char kMagic[5] = "NDTC";
}

template <typename S>
void write_checkpoint(const std::filesystem::path& path, const ParameterSet<S>& params, const std::string& config) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  io::write_magic(out, kMagic);
  io::write_le<std::uint32_t>(out, kCheckpointVersion);
  io::write_string(out, config);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  constexpr DType dtype = sizeof(S) == 4 ? DType::kF32 : DType::kF64;
  for (const auto& p : params) {
    io::write_string(out, p.name);
    io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    io::write_le<std::uint8_t>(out, p.trainable ? 1 : 0);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.shape.size()));
    for (std::size_t d : p.value.shape) io::write_le<std::uint64_t>(out, d);
    for (S v : p.value.data) io::write_le<S>(out, v);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  io::expect_magic(in, kMagic, "checkpoint " + path.string());
  const auto version = io::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config = io::read_string(in);
  const auto count = io::read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = io::read_string(in, 4096);
    const auto dt = io::read_le<std::uint8_t>(in);
    if (dt != 1 && dt != 2) throw FormatError("tensor '" + t.name + "': bad dtype " + std::to_string(dt));
    t.dtype = static_cast<DType>(dt);
    t.trainable = io::read_le<std::uint8_t>(in) != 0;
    const auto ndim = io::read_le<std::uint32_t>(in);
    if (ndim > 8) throw FormatError("tensor '" + t.name + "': implausible rank");
    for (std::uint32_t d = 0; d < ndim; ++d) t.shape.push_back(io::read_le<std::uint64_t>(in));
    const std::size_t n = shape_numel(t.shape);
    if (n > (std::size_t{1} << 31)) throw FormatError("tensor '" + t.name + "': implausible size");
    t.values.resize(n);
    for (auto& v : t.values) v = t.dtype == DType::kF32 ? io::read_le<float>(in) : io::read_le<double>(in);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

template <typename S>
void load_parameters(ParameterSet<S>& params, const Checkpoint& ckpt) {
  std::unordered_map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name.emplace(t.name, &t);
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks parameter '" + p.name + "'");
    const auto& t = *it->second;
    if (t.shape != p.value.shape) {
      throw FormatError("parameter '" + p.name + "': checkpoint shape " + shape_string(t.shape) + " vs model " +
                        shape_string(p.value.shape));
    }
    for (std::size_t k = 0; k < t.values.size(); ++k) p.value.data[k] = static_cast<S>(t.values[k]);
    p.trainable = t.trainable;
  }
  if (by_name.size() != params.size()) throw FormatError("checkpoint holds parameters the model does not declare");
}

template void write_checkpoint(const std::filesystem::path&, const ParameterSet<float>&, const std::string&);
template void write_checkpoint(const std::filesystem::path&, const ParameterSet<double>&, const std::string&);
template void load_parameters(ParameterSet<float>&, const Checkpoint&);
template void load_parameters(ParameterSet<double>&, const Checkpoint&);

}  // namespace notifdt::diff
