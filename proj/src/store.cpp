#include "rppd/store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "rppd/error.hpp"
#include "rppd/simd/kernels.hpp"

namespace rppd {

namespace {

constexpr std::array<char, 4> kMagic = {'R', 'P', 'P', 'D'};

// Values are written byte-by-byte so the format is little-endian regardless
// of host order.
template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const unsigned char* p) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(p[i]) << (8 * i);
  return value;
}

void read_exact(std::istream& in, void* dst, std::size_t n, const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    if (in.bad()) throw Error(Errc::IoFailure, std::string("I/O error while reading ") + what);
    throw Error(Errc::Truncated, std::string("knowledge base truncated in ") + what);
  }
}

}  // namespace

KnowledgeBase::KnowledgeBase(EmbedderDescriptor descriptor, std::vector<ItemId> ids, std::vector<float> matrix)
    : descriptor_(std::move(descriptor)), ids_(std::move(ids)), matrix_(std::move(matrix)) {
  if (descriptor_.dim == 0) throw Error(Errc::InvalidArgument, "knowledge base dim must be positive");
  if (matrix_.size() != ids_.size() * static_cast<std::size_t>(descriptor_.dim)) {
    throw Error(Errc::DimensionMismatch, "matrix holds " + std::to_string(matrix_.size()) + " values for " +
                                             std::to_string(ids_.size()) + " ids of dim " +
                                             std::to_string(descriptor_.dim));
  }
  for (float v : matrix_)
    if (!std::isfinite(v)) throw Error(Errc::InvalidArgument, "knowledge base contains non-finite values");

  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i].value(), i).second)
      throw Error(Errc::DuplicateId, "duplicate id " + ids_[i].value() + " in knowledge base");
  }

  norms_.resize(ids_.size());
  const auto& kernels = simd::active();
  for (std::size_t i = 0; i < ids_.size(); ++i) norms_[i] = std::sqrt(kernels.squared_norm(row(i).data(), dim()));
}

std::ptrdiff_t KnowledgeBase::find(const ItemId& id) const noexcept {
  auto it = index_.find(id.value());
  return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

EmbeddingVector KnowledgeBase::get_vector(const ItemId& id) const {
  auto pos = find(id);
  if (pos < 0) throw Error(Errc::NotFound, "id " + id.value() + " not in knowledge base");
  auto r = row(static_cast<std::size_t>(pos));
  return EmbeddingVector(std::vector<float>(r.begin(), r.end()));
}

KnowledgeBase build_kb(const CorpusManifest& manifest, const EmbedFn& embed, const EmbedderDescriptor& descriptor) {
  if (descriptor.dim == 0) throw Error(Errc::InvalidArgument, "descriptor dim must be positive");
  std::vector<ItemId> ids;
  std::vector<float> matrix;
  ids.reserve(manifest.items.size());
  matrix.reserve(manifest.items.size() * descriptor.dim);

  for (const auto& item : manifest.items) {
    std::vector<float> values;
    try {
      values = embed(item.text).release();
    } catch (const Error& e) {
      throw Error(Errc::EmbedFailure, "embedding item " + item.id.value() + " failed: " + std::string(to_string(e.code())) +
                                          ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(Errc::EmbedFailure, "embedding item " + item.id.value() + " failed: " + e.what());
    }
    if (values.size() != descriptor.dim) {
      throw Error(Errc::DimensionMismatch, "item " + item.id.value() + " embedded to " + std::to_string(values.size()) +
                                               " values, descriptor dim is " + std::to_string(descriptor.dim));
    }
    ids.push_back(item.id);
    matrix.insert(matrix.end(), values.begin(), values.end());
  }
  return KnowledgeBase(descriptor, std::move(ids), std::move(matrix));
}

std::size_t kb_file_size(const KnowledgeBase& kb) noexcept {
  return kKbFixedHeaderSize + kb.descriptor().name.size() + kb.size() * ItemId::kLength +
         kb.matrix().size() * sizeof(float);
}

std::size_t save_kb(const KnowledgeBase& kb, std::ostream& sink) {
  const auto& d = kb.descriptor();
  if (d.name.size() > 0xFFFF) throw Error(Errc::InvalidArgument, "model name longer than 65535 bytes");

  std::string header;
  header.append(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(header, kKbFormatVersion);
  put_le<std::uint32_t>(header, d.dim);
  put_le<std::uint64_t>(header, kb.size());
  put_le<std::uint8_t>(header, static_cast<std::uint8_t>(d.modality));
  put_le<std::uint8_t>(header, static_cast<std::uint8_t>(d.pooling));
  put_le<std::uint16_t>(header, static_cast<std::uint16_t>(d.name.size()));
  header += d.name;
  for (const auto& id : kb.ids()) header += id.value();
  sink.write(header.data(), static_cast<std::streamsize>(header.size()));

  // Matrix in bounded chunks.
  constexpr std::size_t kChunk = 1 << 14;
  std::string buf;
  buf.reserve(kChunk * sizeof(float));
  auto values = kb.matrix();
  for (std::size_t start = 0; start < values.size(); start += kChunk) {
    buf.clear();
    const std::size_t end = std::min(values.size(), start + kChunk);
    for (std::size_t i = start; i < end; ++i) put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(values[i]));
    sink.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  sink.flush();
  if (!sink) throw Error(Errc::IoFailure, "failed writing knowledge base");
  return header.size() + values.size() * sizeof(float);
}

void save_kb_file(const KnowledgeBase& kb, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot open '" + path + "' for writing");
  save_kb(kb, out);
}

KnowledgeBase load_kb(std::istream& source) {
  std::array<unsigned char, kKbFixedHeaderSize> fixed{};
  read_exact(source, fixed.data(), 4, "magic");
  if (std::memcmp(fixed.data(), kMagic.data(), kMagic.size()) != 0)
    throw Error(Errc::BadMagic, "not a knowledge base file (bad magic)");
  read_exact(source, fixed.data() + 4, fixed.size() - 4, "header");

  const auto version = get_le<std::uint32_t>(fixed.data() + 4);
  if (version != kKbFormatVersion)
    throw Error(Errc::UnsupportedVersion, "unsupported knowledge base format version " + std::to_string(version));
  const auto dim = get_le<std::uint32_t>(fixed.data() + 8);
  const auto count = get_le<std::uint64_t>(fixed.data() + 12);
  const auto modality = fixed[20];
  const auto pooling = fixed[21];
  const auto name_len = get_le<std::uint16_t>(fixed.data() + 22);
  if (dim == 0) throw Error(Errc::CorruptHeader, "knowledge base header has dim 0");
  if (modality > 1) throw Error(Errc::CorruptHeader, "unknown modality byte " + std::to_string(modality));
  if (pooling > 1) throw Error(Errc::CorruptHeader, "unknown pooling byte " + std::to_string(pooling));

  EmbedderDescriptor descriptor;
  descriptor.dim = dim;
  descriptor.modality = static_cast<Modality>(modality);
  descriptor.pooling = static_cast<PoolingMode>(pooling);
  descriptor.name.resize(name_len);
  read_exact(source, descriptor.name.data(), name_len, "model name");

  // Grow incrementally so a forged count cannot force a huge allocation
  // before the stream runs dry.
  std::vector<ItemId> ids;
  std::array<char, ItemId::kLength> raw_id{};
  for (std::uint64_t i = 0; i < count; ++i) {
    read_exact(source, raw_id.data(), raw_id.size(), "ids section");
    std::string_view text(raw_id.data(), raw_id.size());
    if (!ItemId::is_valid(text))
      throw Error(Errc::CorruptIds, "malformed id record at index " + std::to_string(i));
    ids.push_back(ItemId::parse(text));
  }

  std::vector<float> matrix;
  const std::uint64_t total = count * dim;
  if (dim != 0 && total / dim != count) throw Error(Errc::CorruptHeader, "count * dim overflows");
  constexpr std::size_t kChunk = 1 << 14;
  std::vector<unsigned char> buf(kChunk * sizeof(float));
  for (std::uint64_t done = 0; done < total;) {
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(kChunk, total - done));
    read_exact(source, buf.data(), n * sizeof(float), "matrix");
    for (std::size_t i = 0; i < n; ++i) {
      float v = std::bit_cast<float>(get_le<std::uint32_t>(buf.data() + i * sizeof(float)));
      if (!std::isfinite(v)) throw Error(Errc::CorruptValues, "non-finite value in matrix");
      matrix.push_back(v);
    }
    done += n;
  }

  if (source.peek() != std::char_traits<char>::eof())
    throw Error(Errc::CorruptHeader, "trailing bytes after knowledge base matrix");

  try {
    return KnowledgeBase(std::move(descriptor), std::move(ids), std::move(matrix));
  } catch (const Error& e) {
    if (e.code() == Errc::DuplicateId) throw Error(Errc::CorruptIds, e.what());
    throw;
  }
}

KnowledgeBase load_kb_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open knowledge base '" + path + "'");
  return load_kb(in);
}

}  // namespace rppd
