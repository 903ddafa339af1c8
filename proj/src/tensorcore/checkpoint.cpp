#include "camp/tensorcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "camp/error.hpp"

namespace camp::tensor {
namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParameterTree& params) {
  std::ostringstream manifest;
  std::size_t offset = 0;
  for (const auto& e : params) {
    if (e.name.empty() || e.name.find_first_of(" \t\n") != std::string::npos) {
      throw InvalidArgument("parameter name '" + e.name + "' cannot be stored in a checkpoint");
    }
    manifest << e.name << ' ' << e.value.rank();
    for (auto d : e.value.shape()) manifest << ' ' << d;
    manifest << ' ' << offset << '\n';
    offset += e.value.size();
  }
  const std::string text = manifest.str();
  std::vector<std::uint8_t> out;
  out.reserve(9 + text.size() + offset * 8);
  out.push_back(kCheckpointVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& e : params) {
    for (double v : e.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ParameterTree decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 9) throw InvalidArgument("checkpoint truncated");
  if (bytes[0] != kCheckpointVersion) {
    throw InvalidArgument("unsupported checkpoint version " + std::to_string(bytes[0]));
  }
  const auto manifest_len = get_u64(&bytes[1]);
  if (manifest_len > bytes.size() - 9) throw InvalidArgument("checkpoint manifest truncated");
  const std::string text(bytes.begin() + 9, bytes.begin() + 9 + static_cast<std::ptrdiff_t>(manifest_len));
  const std::size_t payload_start = 9 + manifest_len;
  const std::size_t payload_doubles = (bytes.size() - payload_start) / 8;
  if ((bytes.size() - payload_start) % 8 != 0) throw InvalidArgument("checkpoint payload misaligned");

  ParameterTree tree;
  std::istringstream lines(text);
  std::string line;
  std::size_t expected_offset = 0;
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    std::string name;
    std::size_t rank = 0, offset = 0;
    if (!(fields >> name >> rank)) throw InvalidArgument("bad checkpoint manifest line: " + line);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) {
      if (!(fields >> d)) throw InvalidArgument("bad checkpoint manifest line: " + line);
    }
    if (!(fields >> offset)) throw InvalidArgument("bad checkpoint manifest line: " + line);
    const auto n = shape_product(shape);
    if (offset != expected_offset || offset + n > payload_doubles) {
      throw InvalidArgument("checkpoint entry '" + name + "' has inconsistent offset");
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      data[i] = std::bit_cast<double>(get_u64(&bytes[payload_start + 8 * (offset + i)]));
    }
    tree.add(name, Tensor(std::move(shape), std::move(data)));
    expected_offset += n;
  }
  if (expected_offset != payload_doubles) throw InvalidArgument("checkpoint payload has trailing data");
  return tree;
}

void save_checkpoint(const ParameterTree& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParameterTree load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_checkpoint_into(ParameterTree& params, const std::filesystem::path& path) {
  params.assign_values(load_checkpoint(path));
}

}  // namespace camp::tensor
