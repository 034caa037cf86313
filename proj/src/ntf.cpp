#include "dyfn/ntf.hpp"

#include <bit>
#include <cstring>

#include <nlohmann/json.hpp>

#include "dyfn/error.hpp"
#include "dyfn/io.hpp"

namespace dyfn::ntf {

namespace {

constexpr char kMagic[4] = {'N', 'T', 'F', '1'};
constexpr std::size_t kMaxHeader = 1u << 20;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode(const std::string& name, const Tensor& t) {
  nlohmann::json header;
  header["name"] = name;
  header["dtype"] = "f32";
  header["shape"] = t.shape();
  const std::string h = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(8 + h.size() + 4 * t.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out.insert(out.end(), h.begin(), h.end());
  for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

NamedTensor decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorKind::MalformedHeader, "missing NTF1 magic");
  const std::size_t hlen = get_u32(bytes.data() + 4);
  if (hlen > kMaxHeader || 8 + hlen > bytes.size())
    fail(ErrorKind::MalformedHeader, "header length " + std::to_string(hlen) + " out of range");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("header is not JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("name") || !header["name"].is_string() ||
      !header.contains("dtype") || header["dtype"] != "f32" || !header.contains("shape") ||
      !header["shape"].is_array())
    fail(ErrorKind::MalformedHeader, "header must hold name, dtype \"f32\" and shape");

  Shape shape;
  for (const auto& d : header["shape"]) {
    if (!d.is_number_unsigned()) fail(ErrorKind::MalformedHeader, "shape entries must be non-negative integers");
    shape.push_back(d.get<std::size_t>());
  }
  const std::size_t count = shape_size(shape);
  const std::size_t payload = bytes.size() - 8 - hlen;
  if (payload < count * 4)
    fail(ErrorKind::TruncatedPayload, "payload holds " + std::to_string(payload) +
                                          " bytes, shape " + shape_string(shape) + " needs " +
                                          std::to_string(count * 4));
  if (payload != count * 4)
    fail(ErrorKind::SizeMismatch, "payload holds " + std::to_string(payload) +
                                      " bytes, shape " + shape_string(shape) + " needs " +
                                      std::to_string(count * 4));

  std::vector<double> data(count);
  const std::uint8_t* p = bytes.data() + 8 + hlen;
  for (std::size_t i = 0; i < count; ++i)
    data[i] = static_cast<double>(std::bit_cast<float>(get_u32(p + 4 * i)));
  return {header["name"].get<std::string>(), Tensor(std::move(shape), std::move(data))};
}

void write_tensor(const std::filesystem::path& path, const std::string& name, const Tensor& t) {
  io::write_atomic(path, encode(name, t));
}

NamedTensor read_named(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  try {
    return decode(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

Tensor read_tensor(const std::filesystem::path& path) { return read_named(path).tensor; }

Tensor to_f32_precision(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace dyfn::ntf
