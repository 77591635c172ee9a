#include "ser/bundle.hpp"

#include <cmath>

#include "ser/binary_io.hpp"
#include "ser/error.hpp"

namespace ser {

namespace {

constexpr std::size_t kHeaderBytes = 32;
constexpr std::uint8_t kEmotionKind = 0;
constexpr std::uint8_t kMtlKind = 1;

struct NamedArray {
  std::string name;
  Matrix* m;
};

struct OwnedArray {
  std::string name;
  Matrix m;
};

void add_dense(std::vector<NamedArray>& out, const std::string& name, nn::DenseParams& d) {
  out.push_back({name + ".W", &d.W});
  out.push_back({name + ".b", &d.b});
}

std::vector<NamedArray> net_arrays(LstmNet& net) {
  std::vector<NamedArray> out;
  for (std::size_t l = 0; l < net.trunk.layers.size(); ++l) {
    auto& layer = net.trunk.layers[l];
    const std::string p = "trunk." + std::to_string(l);
    out.push_back({p + ".W", &layer.W});
    out.push_back({p + ".U", &layer.U});
    out.push_back({p + ".b", &layer.b});
  }
  if (net.penultimate) add_dense(out, "penultimate", *net.penultimate);
  add_dense(out, "head", net.head);
  if (net.language_head) add_dense(out, "language_head", *net.language_head);
  return out;
}

// Builds a zero-filled network with the right shapes.
LstmNet net_skeleton(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t penultimate,
                     std::size_t classes, std::size_t languages) {
  LstmNet net;
  std::size_t in = input;
  for (std::size_t h : hidden) {
    nn::LstmLayerParams l;
    l.W = Matrix::Zero(static_cast<Eigen::Index>(4 * h), static_cast<Eigen::Index>(in));
    l.U = Matrix::Zero(static_cast<Eigen::Index>(4 * h), static_cast<Eigen::Index>(h));
    l.b = Matrix::Zero(static_cast<Eigen::Index>(4 * h), 1);
    net.trunk.layers.push_back(std::move(l));
    in = h;
  }
  auto dense = [](std::size_t i, std::size_t o) {
    return nn::DenseParams{Matrix::Zero(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)),
                           Matrix::Zero(static_cast<Eigen::Index>(o), 1)};
  };
  if (penultimate) {
    net.penultimate = dense(in, penultimate);
    net.head = dense(penultimate, classes);
  } else {
    net.head = dense(in, classes);
  }
  if (languages) net.language_head = dense(in, languages);
  return net;
}

struct Header {
  std::uint8_t kind = 0;
  ModelVariant variant = ModelVariant::Lstm;
  FeatureKind feature = FeatureKind::Is09;
  std::vector<Emotion> labels;
  std::vector<std::string> languages;
  double lambda = 0.0;
  std::size_t input = 0;
  std::vector<std::size_t> hidden;
  std::size_t penultimate = 0;
  const Normalizer* normalizer = nullptr;
  std::size_t svm_machines = 0;
};

std::vector<std::uint8_t> encode(const Header& h, const std::vector<OwnedArray>& arrays) {
  ByteWriter w;
  w.u8(h.kind);
  w.u8(static_cast<std::uint8_t>(h.variant));
  w.u8(static_cast<std::uint8_t>(h.feature));
  w.u32(static_cast<std::uint32_t>(h.labels.size()));
  for (Emotion e : h.labels) w.u8(static_cast<std::uint8_t>(e));
  w.u32(static_cast<std::uint32_t>(h.languages.size()));
  for (const auto& l : h.languages) w.str(l);
  w.f64(h.lambda);
  w.u32(static_cast<std::uint32_t>(h.input));
  w.u32(static_cast<std::uint32_t>(h.hidden.size()));
  for (std::size_t x : h.hidden) w.u32(static_cast<std::uint32_t>(x));
  w.u32(static_cast<std::uint32_t>(h.penultimate));
  const auto& n = *h.normalizer;
  w.u32(static_cast<std::uint32_t>(n.dim()));
  for (Eigen::Index i = 0; i < n.mean.size(); ++i) w.f32(static_cast<float>(n.mean(i)));
  for (Eigen::Index i = 0; i < n.stddev.size(); ++i) w.f32(static_cast<float>(n.stddev(i)));
  w.u32(static_cast<std::uint32_t>(h.svm_machines));
  w.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.m.rows()));
    w.u32(static_cast<std::uint32_t>(a.m.cols()));
  }
  for (const auto& a : arrays)
    for (Eigen::Index i = 0; i < a.m.size(); ++i) w.f32(static_cast<float>(a.m.data()[i]));
  return std::move(w.buffer());
}

void read_arrays(ByteReader& r, const std::vector<NamedArray>& expected) {
  const std::uint32_t count = r.u32();
  if (count != expected.size()) throw Error(Errc::Corrupt, "bundle array count does not match architecture");
  for (const auto& a : expected) {
    const std::string name = r.str();
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (name != a.name || rows != a.m->rows() || cols != a.m->cols())
      throw Error(Errc::Corrupt, "bundle array '" + name + "' does not match architecture");
  }
  for (const auto& a : expected)
    for (Eigen::Index i = 0; i < a.m->size(); ++i) a.m->data()[i] = r.f32();
}

}  // namespace

std::vector<std::uint8_t> save_model(const ModelBundle& bundle) {
  Header h;
  std::vector<OwnedArray> arrays;
  auto add_net = [&](const LstmNet& net) {
    h.input = net.trunk.input_size();
    for (const auto& l : net.trunk.layers) h.hidden.push_back(l.hidden_size());
    h.penultimate = net.penultimate ? net.penultimate->out_size() : 0;
    LstmNet copy = net;
    for (const auto& a : net_arrays(copy)) arrays.push_back({a.name, *a.m});
  };
  if (const auto* em = std::get_if<EmotionModel>(&bundle.model)) {
    h.kind = kEmotionKind;
    h.variant = em->variant();
    h.feature = em->feature;
    h.labels = em->labels;
    h.normalizer = &em->normalizer;
    h.input = em->normalizer.dim();
    if (const auto* lr = std::get_if<LogRegParams>(&em->params)) {
      arrays.push_back({"logreg.W", lr->dense.W});
      arrays.push_back({"logreg.b", lr->dense.b});
    } else if (const auto* svm = std::get_if<SvmParams>(&em->params)) {
      h.svm_machines = svm->machines.size();
      Matrix kernel(2, 1);
      kernel << svm->gamma, svm->C;
      arrays.push_back({"svm.kernel", kernel});
      Matrix biases(static_cast<Eigen::Index>(svm->machines.size()), 1);
      for (std::size_t c = 0; c < svm->machines.size(); ++c) {
        const auto& m = svm->machines[c];
        const std::string p = "svm." + std::to_string(c);
        arrays.push_back({p + ".support", m.support});
        arrays.push_back({p + ".coef", m.coef});
        biases(static_cast<Eigen::Index>(c)) = m.bias;
      }
      arrays.push_back({"svm.bias", biases});
    } else {
      add_net(std::get<LstmNet>(em->params));
    }
  } else {
    const auto& mtl = std::get<MtlModel>(bundle.model);
    h.kind = kMtlKind;
    h.variant = ModelVariant::Lstm;
    h.feature = mtl.feature;
    h.labels = mtl.labels;
    h.languages = mtl.languages;
    h.lambda = mtl.lambda_lang;
    h.normalizer = &mtl.normalizer;
    add_net(mtl.net);
  }
  const auto payload = encode(h, arrays);
  ByteWriter w;
  w.raw("SERM");
  w.u16(kBundleVersion);
  w.u16(0);
  w.u64(bundle.config_hash);
  w.u64(payload.size());
  w.u64(fnv1a64(payload));
  w.bytes(payload);
  return std::move(w.buffer());
}

ModelBundle load_model(std::span<const std::uint8_t> bytes, std::optional<std::uint64_t> expected_config_hash) {
  if (bytes.size() < kHeaderBytes) throw Error(Errc::Corrupt, "model bundle is truncated");
  ByteReader hr(bytes.first(kHeaderBytes), Errc::Corrupt);
  if (hr.raw(4) != "SERM") throw Error(Errc::Corrupt, "not a model bundle (bad magic)");
  const std::uint16_t version = hr.u16();
  if (version != kBundleVersion)
    throw Error(Errc::VersionMismatch, "model bundle version " + std::to_string(version) +
                                           ", this build reads version " + std::to_string(kBundleVersion));
  hr.u16();
  ModelBundle out;
  out.config_hash = hr.u64();
  const std::uint64_t payload_len = hr.u64();
  const std::uint64_t checksum = hr.u64();
  if (payload_len != bytes.size() - kHeaderBytes) throw Error(Errc::Corrupt, "model bundle length mismatch");
  auto payload = bytes.subspan(kHeaderBytes);
  if (fnv1a64(payload) != checksum) throw Error(Errc::Corrupt, "model bundle checksum mismatch");
  if (expected_config_hash && *expected_config_hash != out.config_hash)
    throw Error(Errc::HashMismatch, "model bundle was trained with a different configuration");

  ByteReader r(payload, Errc::Corrupt);
  const std::uint8_t kind = r.u8();
  const std::uint8_t variant = r.u8();
  const std::uint8_t feature = r.u8();
  if (kind > kMtlKind || variant > 2 || feature > 1) throw Error(Errc::Corrupt, "unknown model kind");
  std::vector<Emotion> labels(r.u32());
  for (auto& e : labels) {
    const std::uint8_t v = r.u8();
    if (v >= kNumEmotions) throw Error(Errc::Corrupt, "unknown emotion code in bundle");
    e = static_cast<Emotion>(v);
  }
  std::vector<std::string> languages(r.u32());
  for (auto& l : languages) l = r.str();
  const double lambda = r.f64();
  const std::size_t input = r.u32();
  std::vector<std::size_t> hidden(r.u32());
  if (hidden.size() > 64) throw Error(Errc::Corrupt, "implausible layer count");
  for (auto& x : hidden) x = r.u32();
  const std::size_t penultimate = r.u32();
  Normalizer norm;
  const std::uint32_t dim = r.u32();
  if (dim > r.remaining() / 8) throw Error(Errc::Corrupt, "normalizer exceeds bundle");
  norm.mean.resize(dim);
  norm.stddev.resize(dim);
  for (std::uint32_t i = 0; i < dim; ++i) norm.mean(i) = r.f32();
  for (std::uint32_t i = 0; i < dim; ++i) norm.stddev(i) = r.f32();
  const std::uint32_t machines = r.u32();
  const auto fkind = static_cast<FeatureKind>(feature);

  auto finish = [&] {
    if (r.remaining() != 0) throw Error(Errc::Corrupt, "trailing bytes in model bundle");
  };

  if (kind == kMtlKind) {
    MtlModel m;
    m.feature = fkind;
    m.normalizer = std::move(norm);
    m.labels = labels;
    m.languages = languages;
    m.lambda_lang = lambda;
    m.net = net_skeleton(input, hidden, penultimate, labels.size(), languages.size());
    read_arrays(r, net_arrays(m.net));
    finish();
    out.model = std::move(m);
    return out;
  }

  EmotionModel m;
  m.feature = fkind;
  m.normalizer = std::move(norm);
  m.labels = labels;
  switch (static_cast<ModelVariant>(variant)) {
    case ModelVariant::LogReg: {
      LogRegParams p;
      p.dense = {Matrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(dim)),
                 Matrix::Zero(static_cast<Eigen::Index>(labels.size()), 1)};
      std::vector<NamedArray> arrays;
      add_dense(arrays, "logreg", p.dense);
      read_arrays(r, arrays);
      m.params = std::move(p);
      break;
    }
    case ModelVariant::SvmOvr: {
      // The support-vector counts live in the shape table, so read it directly.
      const std::uint32_t count = r.u32();
      if (count != 2 * machines + 2) throw Error(Errc::Corrupt, "bundle array count does not match architecture");
      std::vector<std::pair<std::string, std::pair<std::uint32_t, std::uint32_t>>> shapes(count);
      for (auto& s : shapes) {
        s.first = r.str();
        s.second.first = r.u32();
        s.second.second = r.u32();
      }
      auto read_matrix = [&](std::size_t i, const std::string& name) {
        const auto& [n, shape] = shapes[i];
        if (n != name) throw Error(Errc::Corrupt, "unexpected bundle array '" + n + "'");
        if (static_cast<std::uint64_t>(shape.first) * shape.second * 4 > r.remaining())
          throw Error(Errc::Corrupt, "bundle array '" + n + "' exceeds bundle");
        Matrix mat(shape.first, shape.second);
        for (Eigen::Index k = 0; k < mat.size(); ++k) mat.data()[k] = r.f32();
        return mat;
      };
      SvmParams p;
      const Matrix kernel = read_matrix(0, "svm.kernel");
      if (kernel.size() != 2) throw Error(Errc::Corrupt, "bad kernel record");
      p.gamma = kernel(0);
      p.C = kernel(1);
      for (std::uint32_t c = 0; c < machines; ++c) {
        const std::string prefix = "svm." + std::to_string(c);
        BinarySvm b;
        b.support = read_matrix(1 + 2 * c, prefix + ".support");
        const Matrix coef = read_matrix(2 + 2 * c, prefix + ".coef");
        if (coef.cols() != 1 || coef.rows() != b.support.rows() || b.support.cols() != dim)
          throw Error(Errc::Corrupt, "bad support-vector shapes");
        b.coef = coef.col(0);
        p.machines.push_back(std::move(b));
      }
      const Matrix biases = read_matrix(1 + 2 * machines, "svm.bias");
      if (biases.size() != machines) throw Error(Errc::Corrupt, "bad bias record");
      for (std::uint32_t c = 0; c < machines; ++c) p.machines[c].bias = biases(c);
      m.params = std::move(p);
      break;
    }
    case ModelVariant::Lstm: {
      LstmNet net = net_skeleton(input, hidden, penultimate, labels.size(), 0);
      read_arrays(r, net_arrays(net));
      m.params = std::move(net);
      break;
    }
  }
  finish();
  out.model = std::move(m);
  return out;
}

void save_model_file(const std::filesystem::path& path, const ModelBundle& bundle) {
  write_file_bytes(path, save_model(bundle));
}

ModelBundle load_model_file(const std::filesystem::path& path, std::optional<std::uint64_t> expected_config_hash) {
  const auto bytes = read_file_bytes(path);
  return load_model(bytes, expected_config_hash);
}

}  // namespace ser
