#include "ser/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "json.hpp"
#include "ser/binary_io.hpp"
#include "ser/error.hpp"
#include "ser/rng.hpp"

namespace ser {

namespace {

std::string lower_trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  auto e = s.find_last_not_of(" \t\r\n");
  std::string out = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

const std::vector<std::string> kColumns = {"id",       "audio_path", "speaker_id",
                                           "language", "raw_label",  "corpus"};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class ManifestBuilder {
 public:
  ManifestBuilder(const std::filesystem::path& base, const ManifestOptions& opts)
      : base_(base), opts_(opts), labels_(opts.labels) {}

  void add(UtteranceRecord rec, std::size_t line) {
    if (!ids_.insert(rec.id).second)
      throw Error(Errc::DuplicateId, "duplicate utterance id '" + rec.id + "' (line " +
                                         std::to_string(line) + ")");
    rec.corpus = lower_trim(rec.corpus);
    std::optional<Emotion> emotion;
    if (!labels_.lookup(rec.corpus, rec.raw_label, emotion)) {
      if (opts_.strict)
        throw Error(Errc::UnknownRawLabel, "corpus '" + rec.corpus + "' has no mapping for label '" +
                                               rec.raw_label + "' (line " + std::to_string(line) + ")");
      ++out_.unknown;
      return;
    }
    if (!emotion) {
      ++out_.excluded;
      return;
    }
    rec.emotion = *emotion;
    if (rec.audio_path.is_relative()) rec.audio_path = base_ / rec.audio_path;
    out_.records.push_back(std::move(rec));
  }

  Manifest finish() { return std::move(out_); }

 private:
  std::filesystem::path base_;
  ManifestOptions opts_;
  LabelMap labels_;
  std::set<std::string> ids_;
  Manifest out_;
};

}  // namespace

const char* to_string(Emotion e) {
  switch (e) {
    case Emotion::Anger: return "anger";
    case Emotion::Happy: return "happy";
    case Emotion::Sad: return "sad";
    case Emotion::Fear: return "fear";
    case Emotion::Neutral: return "neutral";
  }
  return "?";
}

std::optional<Emotion> emotion_from_string(const std::string& s) {
  const std::string k = lower_trim(s);
  for (std::size_t i = 0; i < kNumEmotions; ++i) {
    const auto e = static_cast<Emotion>(i);
    if (k == to_string(e)) return e;
  }
  return std::nullopt;
}

LabelMap::LabelMap(LabelMapOptions opts) {
  constexpr std::optional<Emotion> X = std::nullopt;
  const auto A = Emotion::Anger, H = Emotion::Happy, S = Emotion::Sad,
             F = Emotion::Fear, N = Emotion::Neutral;
  // Table entries carry the published label names plus the short codes the
  // corpus releases use in file names or annotation files.
  table_["emodb"] = {{"anger", A},   {"w", A},       {"happiness", H}, {"f", H},
                     {"sadness", S}, {"t", S},       {"fear", F},      {"a", F},
                     {"neutral", N}, {"n", N},       {"disgust", X},   {"e", X},
                     {"boredom", X}, {"l", X}};
  table_["savee"] = {{"anger", A},   {"a", A},       {"happiness", H}, {"h", H},
                     {"sadness", S}, {"sa", S},      {"fear", F},      {"f", F},
                     {"neutral", N}, {"n", N},       {"disgust", X},   {"d", X},
                     {"surprise", X}, {"su", X}};
  table_["emovo"] = {{"anger", A},   {"rab", A},     {"joy", H},       {"gio", H},
                     {"sadness", S}, {"tri", S},     {"fear", F},      {"pau", F},
                     {"neutral", N}, {"neu", N},     {"disgust", X},   {"dis", X},
                     {"surprise", X}, {"sor", X}};
  table_["masc"] = {{"anger", A}, {"elation", H}, {"sadness", S}, {"panic", F}, {"neutral", N}};
  const std::optional<Emotion> exc = opts.merge_excitement ? std::optional(H) : X;
  table_["iemocap"] = {{"anger", A},       {"ang", A},      {"happiness", H}, {"hap", H},
                       {"excitement", exc}, {"exc", exc},   {"sadness", S},   {"sad", S},
                       {"fear", F},        {"fea", F},      {"neutral", N},   {"neu", N},
                       {"frustration", X}, {"fru", X},      {"surprise", X},  {"sur", X},
                       {"other", X},       {"oth", X},      {"disgust", X},   {"dis", X},
                       {"xxx", X}};
  table_["synthetic"] = {{"anger", A}, {"happy", H}, {"sad", S}, {"fear", F}, {"neutral", N}};
}

bool LabelMap::knows_corpus(const std::string& corpus) const {
  return table_.count(lower_trim(corpus)) != 0;
}

bool LabelMap::lookup(const std::string& corpus, const std::string& raw_label,
                      std::optional<Emotion>& out) const {
  auto c = table_.find(lower_trim(corpus));
  if (c == table_.end()) return false;
  auto l = c->second.find(lower_trim(raw_label));
  if (l == c->second.end()) return false;
  out = l->second;
  return true;
}

std::vector<std::string> LabelMap::corpora() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : table_) out.push_back(k);
  return out;
}

const std::map<std::string, std::optional<Emotion>>& LabelMap::labels(
    const std::string& corpus) const {
  auto c = table_.find(lower_trim(corpus));
  if (c == table_.end()) throw Error(Errc::UnknownRawLabel, "unknown corpus '" + corpus + "'");
  return c->second;
}

Manifest parse_manifest_csv(const std::string& text, const std::filesystem::path& base_dir,
                            const ManifestOptions& opts) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<int> col(kColumns.size(), -1);
  bool have_header = false;
  ManifestBuilder builder(base_dir, opts);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto fields = split_csv_line(line);
    if (!have_header) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        auto it = std::find(kColumns.begin(), kColumns.end(), lower_trim(fields[i]));
        if (it != kColumns.end()) col[static_cast<std::size_t>(it - kColumns.begin())] = static_cast<int>(i);
      }
      for (std::size_t c = 0; c < kColumns.size(); ++c)
        if (col[c] < 0) throw Error(Errc::MissingColumn, "manifest lacks column '" + kColumns[c] + "'");
      have_header = true;
      continue;
    }
    auto get = [&](std::size_t c) -> std::string {
      const auto idx = static_cast<std::size_t>(col[c]);
      if (idx >= fields.size())
        throw Error(Errc::MissingColumn, "line " + std::to_string(line_no) + " lacks column '" +
                                             kColumns[c] + "'");
      return fields[idx];
    };
    UtteranceRecord rec;
    rec.id = get(0);
    rec.audio_path = get(1);
    rec.speaker_id = get(2);
    rec.language = get(3);
    rec.raw_label = get(4);
    rec.corpus = get(5);
    builder.add(std::move(rec), line_no);
  }
  if (!have_header) throw Error(Errc::MissingColumn, "manifest is empty");
  return builder.finish();
}

Manifest parse_manifest_jsonl(const std::string& text, const std::filesystem::path& base_dir,
                              const ManifestOptions& opts) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  ManifestBuilder builder(base_dir, opts);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::Corrupt, "line " + std::to_string(line_no) + ": " + e.what());
    }
    std::array<std::string, 6> v;
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
      if (!j.contains(kColumns[c]) || !j[kColumns[c]].is_string())
        throw Error(Errc::MissingColumn, "line " + std::to_string(line_no) + " lacks key '" +
                                             kColumns[c] + "'");
      v[c] = j[kColumns[c]].get<std::string>();
    }
    UtteranceRecord rec{v[0], v[1], v[2], v[3], v[4], v[5]};
    builder.add(std::move(rec), line_no);
  }
  return builder.finish();
}

Manifest load_manifest(const std::filesystem::path& path, const ManifestOptions& opts) {
  const auto bytes = read_file_bytes(path);
  const std::string text(bytes.begin(), bytes.end());
  const auto ext = lower_trim(path.extension().string());
  const auto base = path.parent_path();
  if (ext == ".jsonl" || ext == ".json") return parse_manifest_jsonl(text, base, opts);
  return parse_manifest_csv(text, base, opts);
}

void write_manifest_csv(const std::filesystem::path& path,
                        const std::vector<UtteranceRecord>& records) {
  std::string out = "id,audio_path,speaker_id,language,raw_label,corpus\n";
  const auto base = path.parent_path();
  for (const auto& r : records) {
    auto audio = r.audio_path;
    if (!base.empty())
      audio = std::filesystem::absolute(audio).lexically_relative(std::filesystem::absolute(base));
    out += csv_field(r.id) + "," + csv_field(audio.generic_string()) + "," +
           csv_field(r.speaker_id) + "," + csv_field(r.language) + "," +
           csv_field(r.raw_label) + "," + csv_field(r.corpus) + "\n";
  }
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(out.data()), out.size()));
}

Split split_speaker_disjoint(const std::vector<UtteranceRecord>& records, const SplitSpec& spec) {
  std::vector<const UtteranceRecord*> pool;
  for (const auto& r : records)
    if (spec.corpus.empty() || lower_trim(r.corpus) == lower_trim(spec.corpus)) pool.push_back(&r);

  std::set<std::string> speaker_set;
  for (const auto* r : pool) speaker_set.insert(r->speaker_id);
  std::vector<std::string> speakers(speaker_set.begin(), speaker_set.end());

  Split split;
  split.spec = spec;
  if (spec.held_out_speakers.empty()) {
    const std::size_t count = pool.size() < kLargeCorpusUtterances ? 1 : 2;
    if (speakers.size() <= count)
      throw Error(Errc::EmptySplit, "corpus has " + std::to_string(speakers.size()) +
                                        " speakers, cannot hold out " + std::to_string(count));
    Rng rng(derive_seed(spec.seed, 0x5e1));
    // Dyadic-session corpora (speaker ids "SesNN[FM]") hold out a session.
    std::map<std::string, std::vector<std::string>> sessions;
    bool session_ids = count == 2;
    for (const auto& s : speakers) {
      if (s.size() < 6 || s.rfind("Ses", 0) != 0) session_ids = false;
      else sessions[s.substr(0, 5)].push_back(s);
    }
    if (session_ids && sessions.size() > 1) {
      std::vector<std::string> keys;
      for (const auto& [k, v] : sessions) keys.push_back(k);
      split.spec.held_out_speakers = sessions[keys[rng.index(keys.size())]];
    } else {
      auto shuffled = speakers;
      rng.shuffle(shuffled);
      shuffled.resize(count);
      std::sort(shuffled.begin(), shuffled.end());
      split.spec.held_out_speakers = shuffled;
    }
  } else {
    for (const auto& s : spec.held_out_speakers)
      if (!speaker_set.count(s)) throw Error(Errc::UnknownSpeaker, "unknown speaker '" + s + "'");
  }

  const std::set<std::string> held(split.spec.held_out_speakers.begin(),
                                   split.spec.held_out_speakers.end());
  for (const auto* r : pool) (held.count(r->speaker_id) ? split.test : split.train).push_back(*r);
  if (split.train.empty() || split.test.empty())
    throw Error(Errc::EmptySplit, std::string(split.train.empty() ? "train" : "test") +
                                      " side of the split is empty");
  return split;
}

std::string split_to_json(const Split& split) {
  nlohmann::ordered_json j;
  j["spec"]["corpus"] = split.spec.corpus;
  j["spec"]["held_out_speakers"] = split.spec.held_out_speakers;
  j["spec"]["seed"] = split.spec.seed;
  auto ids = [](const std::vector<UtteranceRecord>& rs) {
    std::vector<std::string> out;
    for (const auto& r : rs) out.push_back(r.id);
    return out;
  };
  j["train"] = ids(split.train);
  j["test"] = ids(split.test);
  return j.dump(2) + "\n";
}

}  // namespace ser
