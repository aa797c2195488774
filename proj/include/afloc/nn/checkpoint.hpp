#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afloc/nn/network.hpp"

namespace afloc::nn {

/// One entry of a checkpoint container. Values are stored as little-endian
/// 32-bit floats.
struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

template <typename Scalar>
void export_state(Network<Scalar>& net, const std::string& prefix, std::vector<NamedTensor>& out) {
  for (auto& [name, t] : net.named_state()) {
    NamedTensor nt{prefix + name, {}, {}};
    for (auto d : t->shape()) nt.shape.push_back(d);
    nt.values.resize(static_cast<std::size_t>(t->size()));
    for (Index i = 0; i < t->size(); ++i) nt.values[static_cast<std::size_t>(i)] = static_cast<float>((*t)[i]);
    out.push_back(std::move(nt));
  }
}

template <typename Scalar>
void import_state(Network<Scalar>& net, const std::string& prefix, const std::vector<NamedTensor>& in) {
  for (auto& [name, t] : net.named_state()) {
    const auto& nt = find_tensor(in, prefix + name);
    Shape shape(nt.shape.begin(), nt.shape.end());
    if (shape != t->shape())
      fail(ErrorCode::ShapeMismatch, "checkpoint tensor " + nt.name + " has shape " + shape_string(shape) +
                                         ", network expects " + shape_string(t->shape()));
    for (Index i = 0; i < t->size(); ++i) (*t)[i] = static_cast<Scalar>(nt.values[static_cast<std::size_t>(i)]);
  }
}

}  // namespace afloc::nn
