#include "ser/feature_cache.hpp"

#include "ser/binary_io.hpp"
#include "ser/corpus.hpp"
#include "ser/error.hpp"
#include "ser/parallel.hpp"

namespace ser {

namespace {
constexpr std::size_t kHeaderBytes = 20;
constexpr std::size_t kMfccValues = kMfccFrames * kNumCeps;
}  // namespace

const char* to_string(FeatureKind kind) {
  return kind == FeatureKind::Is09 ? "is09" : "mfcc_seq";
}

FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "is09") return FeatureKind::Is09;
  if (s == "mfcc_seq" || s == "mfcc") return FeatureKind::MfccSeq;
  throw Error(Errc::Config, "unknown feature kind '" + s + "'");
}

CachedFeatures CachedFeatures::from(const Is09Vector* is09, const MfccSequence* mfcc) {
  CachedFeatures out;
  if (is09) out.is09 = std::vector<float>(is09->values.begin(), is09->values.end());
  if (mfcc) {
    std::vector<float> m(kMfccValues);
    for (std::size_t r = 0; r < kMfccFrames; ++r)
      for (std::size_t c = 0; c < kNumCeps; ++c)
        m[r * kNumCeps + c] = static_cast<float>(
            mfcc->matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    out.mfcc = std::move(m);
    out.valid_frames = static_cast<std::uint16_t>(mfcc->valid_frames);
  }
  return out;
}

Is09Vector CachedFeatures::is09_vector() const {
  if (!is09) throw Error(Errc::FeatureKindMismatch, "cache entry has no is09 features");
  Is09Vector v;
  for (std::size_t i = 0; i < kIs09Dim; ++i) v.values[i] = (*is09)[i];
  return v;
}

MfccSequence CachedFeatures::mfcc_sequence() const {
  if (!mfcc) throw Error(Errc::FeatureKindMismatch, "cache entry has no mfcc features");
  MfccSequence s;
  for (std::size_t r = 0; r < kMfccFrames; ++r)
    for (std::size_t c = 0; c < kNumCeps; ++c)
      s.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = (*mfcc)[r * kNumCeps + c];
  s.valid_frames = valid_frames;
  return s;
}

void FeatureCache::put(const std::string& id, CachedFeatures features) {
  if (features.is09 && features.is09->size() != kIs09Dim)
    throw Error(Errc::ShapeMismatch, "is09 vector must have 384 values");
  if (features.mfcc && features.mfcc->size() != kMfccValues)
    throw Error(Errc::ShapeMismatch, "mfcc matrix must have 120x13 values");
  entries_[id] = std::move(features);
}

const CachedFeatures& FeatureCache::get(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end())
    throw Error(Errc::MissingUtterance, "utterance '" + id + "' is not in the feature cache");
  return it->second;
}

std::vector<std::uint8_t> FeatureCache::serialize() const {
  ByteWriter index, data;
  for (const auto& [id, f] : entries_) {
    index.str(id);
    index.u8(static_cast<std::uint8_t>((f.is09 ? 1 : 0) | (f.mfcc ? 2 : 0)));
    index.u16(f.valid_frames);
    index.u64(data.size());
    if (f.is09)
      for (float v : *f.is09) data.f32(v);
    if (f.mfcc)
      for (float v : *f.mfcc) data.f32(v);
  }
  ByteWriter body;
  body.bytes(index.buffer());
  body.bytes(data.buffer());

  ByteWriter out;
  out.raw("SERF");
  out.u16(kVersion);
  out.u16(0);
  out.u32(static_cast<std::uint32_t>(entries_.size()));
  out.u64(fnv1a64(body.buffer()));
  out.bytes(body.buffer());
  return std::move(out.buffer());
}

FeatureCache FeatureCache::deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, Errc::Corrupt);
  if (bytes.size() < kHeaderBytes || r.raw(4) != "SERF")
    throw Error(Errc::Corrupt, "not a feature cache (bad magic)");
  const std::uint16_t version = r.u16();
  if (version != kVersion)
    throw Error(Errc::VersionMismatch, "feature cache version " + std::to_string(version) +
                                           ", reader supports " + std::to_string(kVersion));
  r.u16();
  const std::uint32_t count = r.u32();
  const std::uint64_t checksum = r.u64();
  const auto body = bytes.subspan(kHeaderBytes);
  if (fnv1a64(body) != checksum) throw Error(Errc::Corrupt, "feature cache checksum mismatch");

  struct IndexEntry {
    std::string id;
    std::uint8_t flags;
    std::uint16_t valid_frames;
    std::uint64_t offset;
  };
  std::vector<IndexEntry> index(count);
  for (auto& e : index) {
    e.id = r.str();
    e.flags = r.u8();
    e.valid_frames = r.u16();
    e.offset = r.u64();
  }
  const std::size_t data_start = r.pos();
  FeatureCache cache;
  for (const auto& e : index) {
    r.seek(data_start + e.offset);
    CachedFeatures f;
    f.valid_frames = e.valid_frames;
    if (e.flags & 1) {
      f.is09 = std::vector<float>(kIs09Dim);
      for (auto& v : *f.is09) v = r.f32();
    }
    if (e.flags & 2) {
      f.mfcc = std::vector<float>(kMfccValues);
      for (auto& v : *f.mfcc) v = r.f32();
    }
    if (!cache.entries_.emplace(e.id, std::move(f)).second)
      throw Error(Errc::Corrupt, "duplicate id in feature cache: " + e.id);
  }
  return cache;
}

void FeatureCache::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

FeatureCache FeatureCache::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path));
}

CachedFeatures extract_utterance(const Waveform& w, bool is09, bool mfcc) {
  std::optional<Is09Vector> v;
  std::optional<MfccSequence> m;
  if (is09) v = is09_vector(pad_to_length(w, 400 + 160));
  if (mfcc) m = mfcc_sequence(pad_to_length(w, 400));
  return CachedFeatures::from(v ? &*v : nullptr, m ? &*m : nullptr);
}

FeatureCache extract_features(const std::vector<UtteranceRecord>& records,
                              const ExtractOptions& opts) {
  std::vector<CachedFeatures> out(records.size());
  parallel_for(records.size(), opts.jobs ? opts.jobs : default_jobs(), [&](std::size_t i) {
    out[i] = extract_utterance(read_wav(records[i].audio_path), opts.is09, opts.mfcc);
  });
  FeatureCache cache;
  for (std::size_t i = 0; i < records.size(); ++i) cache.put(records[i].id, std::move(out[i]));
  return cache;
}

}  // namespace ser
