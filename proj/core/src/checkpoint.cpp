#include "alike/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace alike {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr std::size_t kMagicLength = sizeof(kCheckpointMagic) - 1;

template <typename U>
void put(std::ostream& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.write(buf, sizeof(U));
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename U>
  U get(const char* what) {
    U v{};
    bytes(reinterpret_cast<char*>(&v), sizeof(U), what);
    return v;
  }

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail(std::string("truncated ") + what);
    offset_ += n;
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  std::uint64_t offset() const { return offset_; }

  [[noreturn]] void fail(const std::string& why) const {
    throw InputError(source_ + ": " + why + " at byte offset " + std::to_string(offset_));
  }

 private:
  std::istream& in_;
  std::string source_;
  std::uint64_t offset_ = 0;
};

}  // namespace

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out.write(kCheckpointMagic, kMagicLength);
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
    for (auto e : t.value.shape()) put<std::int64_t>(out, e);
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(float)));
  }
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, tensors);
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<NamedTensor> read_checkpoint(std::istream& in, const std::string& source) {
  Reader r(in, source);
  char magic[kMagicLength];
  r.bytes(magic, kMagicLength, "magic");
  if (std::memcmp(magic, kCheckpointMagic, kMagicLength) != 0) r.fail("bad magic");
  std::vector<NamedTensor> out;
  while (!r.at_end()) {
    NamedTensor t;
    const auto name_len = r.get<std::uint32_t>("name length");
    if (name_len == 0 || name_len > 4096) r.fail("implausible name length");
    t.name.resize(name_len);
    r.bytes(t.name.data(), name_len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > static_cast<std::uint32_t>(kMaxRank)) r.fail("rank exceeds 4");
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto e = r.get<std::int64_t>("extent");
      if (e < 0 || e > (std::int64_t(1) << 31)) r.fail("invalid extent");
      shape.push_back(e);
      numel *= e;
      if (numel > (std::int64_t(1) << 31)) r.fail("tensor too large");
    }
    Tensor<float> value(shape);
    r.bytes(reinterpret_cast<char*>(value.data()), value.size() * sizeof(float), "tensor data");
    t.value = std::move(value);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  return read_checkpoint(in, path.string());
}

}  // namespace alike
