// PCHX1 bundle encoding. All integers and IEEE-754 doubles are little-endian.
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "patchx/pipeline.hpp"

namespace patchx {

namespace {

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_arithmetic_v<T>);
    if constexpr (std::is_same_v<T, double>) {
      put(std::bit_cast<std::uint64_t>(value));
    } else {
      using U = std::make_unsigned_t<T>;
      auto u = static_cast<U>(value);
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes_.push_back(static_cast<std::uint8_t>(u & 0xFFu));
        if constexpr (sizeof(T) > 1) u = static_cast<U>(u >> 8);
      }
    }
  }
  void put_bool(bool b) { put<std::uint8_t>(b ? 1 : 0); }
  void put_count(std::size_t n) { put(static_cast<std::uint32_t>(n)); }
  void put_doubles(std::span<const double> values) {
    put_count(values.size());
    for (double v : values) put(v);
  }
  void put_raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    static_assert(std::is_arithmetic_v<T>);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(get<std::uint64_t>());
    } else {
      need(sizeof(T));
      using U = std::make_unsigned_t<T>;
      U u = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        u = static_cast<U>(u | (static_cast<U>(bytes_[pos_ + i]) << (8 * i)));
      }
      pos_ += sizeof(T);
      return static_cast<T>(u);
    }
  }
  bool get_bool() {
    const auto b = get<std::uint8_t>();
    if (b > 1) throw FormatError("bundle: invalid boolean byte");
    return b == 1;
  }
  std::size_t get_count(std::size_t limit = 1u << 28) {
    const auto n = get<std::uint32_t>();
    if (n > limit) throw FormatError("bundle: implausible element count");
    return n;
  }
  std::vector<double> get_doubles() {
    const auto n = get_count();
    need(n * 8);
    std::vector<double> out(n);
    for (auto& v : out) v = get<double>();
    return out;
  }
  std::string_view get_raw(std::size_t n) {
    need(n);
    std::string_view s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("bundle: unexpected end of data");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename E>
E get_enum(ByteReader& r, std::uint8_t max) {
  const auto v = r.get<std::uint8_t>();
  if (v > max) throw FormatError("bundle: invalid enum value");
  return static_cast<E>(v);
}

void put_shallow(ByteWriter& w, const ShallowModel& m) {
  const auto& s = m.spec;
  w.put(static_cast<std::uint8_t>(s.kind));
  w.put(static_cast<std::int32_t>(m.class_count));
  w.put(static_cast<std::uint64_t>(m.feature_dimension));
  w.put(s.svm.c_reg);
  w.put(static_cast<std::int32_t>(s.svm.epochs));
  w.put(s.svm.learning_rate);
  w.put(s.svm.seed);
  w.put_bool(s.svm.standardize);
  w.put_bool(s.svm.force_one_vs_rest);
  w.put(static_cast<std::int32_t>(s.forest.trees));
  w.put(static_cast<std::int32_t>(s.forest.max_depth));
  w.put(static_cast<std::int32_t>(s.forest.min_leaf));
  w.put(static_cast<std::uint8_t>(s.forest.features));
  w.put(s.forest.seed);
  w.put(static_cast<std::uint8_t>(s.trivial.mode));

  if (const auto* svm = std::get_if<LinearSvm>(&m.impl)) {
    w.put_bool(svm->binary);
    w.put_doubles(svm->feature_mean);
    w.put_doubles(svm->feature_scale);
    w.put_count(svm->machines.size());
    for (const auto& machine : svm->machines) {
      w.put_doubles(machine.weights);
      w.put(machine.bias);
    }
  } else if (const auto* forest = std::get_if<RandomForest>(&m.impl)) {
    w.put_count(forest->trees.size());
    for (const auto& tree : forest->trees) {
      w.put_count(tree.size());
      for (const auto& node : tree) {
        w.put(static_cast<std::int32_t>(node.feature));
        w.put(node.threshold);
        w.put(static_cast<std::int32_t>(node.left));
        w.put(static_cast<std::int32_t>(node.right));
        w.put(static_cast<std::int32_t>(node.prediction));
      }
    }
  }
}

ShallowModel get_shallow(ByteReader& r) {
  ShallowModel m;
  auto& s = m.spec;
  s.kind = get_enum<ShallowKind>(r, 2);
  m.class_count = r.get<std::int32_t>();
  m.feature_dimension = static_cast<std::size_t>(r.get<std::uint64_t>());
  s.svm.c_reg = r.get<double>();
  s.svm.epochs = r.get<std::int32_t>();
  s.svm.learning_rate = r.get<double>();
  s.svm.seed = r.get<std::uint64_t>();
  s.svm.standardize = r.get_bool();
  s.svm.force_one_vs_rest = r.get_bool();
  s.forest.trees = r.get<std::int32_t>();
  s.forest.max_depth = r.get<std::int32_t>();
  s.forest.min_leaf = r.get<std::int32_t>();
  s.forest.features = get_enum<FeatureSubsample>(r, 1);
  s.forest.seed = r.get<std::uint64_t>();
  s.trivial.mode = get_enum<TrivialMode>(r, 1);

  switch (s.kind) {
    case ShallowKind::svm: {
      LinearSvm svm;
      svm.class_count = m.class_count;
      svm.binary = r.get_bool();
      svm.feature_mean = r.get_doubles();
      svm.feature_scale = r.get_doubles();
      const auto machines = r.get_count();
      for (std::size_t i = 0; i < machines; ++i) {
        LinearSvm::Machine machine;
        machine.weights = r.get_doubles();
        machine.bias = r.get<double>();
        if (machine.weights.size() != m.feature_dimension) {
          throw FormatError("bundle: svm weight dimension mismatch");
        }
        svm.machines.push_back(std::move(machine));
      }
      if (svm.machines.size() != (svm.binary ? 1u : static_cast<std::size_t>(m.class_count))) {
        throw FormatError("bundle: svm machine count mismatch");
      }
      m.impl = std::move(svm);
      break;
    }
    case ShallowKind::forest: {
      RandomForest forest;
      forest.class_count = m.class_count;
      const auto trees = r.get_count();
      for (std::size_t t = 0; t < trees; ++t) {
        RandomForest::Tree tree(r.get_count());
        for (auto& node : tree) {
          node.feature = r.get<std::int32_t>();
          node.threshold = r.get<double>();
          node.left = r.get<std::int32_t>();
          node.right = r.get<std::int32_t>();
          node.prediction = r.get<std::int32_t>();
          const auto n = static_cast<int>(tree.size());
          if (node.feature >= static_cast<int>(m.feature_dimension) ||
              (node.feature >= 0 && (node.left <= 0 || node.left >= n || node.right <= 0 ||
                                     node.right >= n)) ||
              node.prediction < 0 || node.prediction >= m.class_count) {
            throw FormatError("bundle: corrupt tree node");
          }
        }
        if (tree.empty()) throw FormatError("bundle: empty tree");
        forest.trees.push_back(std::move(tree));
      }
      m.impl = std::move(forest);
      break;
    }
    case ShallowKind::trivial:
      m.impl = TrivialVoter{s.trivial.mode};
      break;
  }
  return m;
}

}  // namespace

std::vector<std::uint8_t> encode_bundle(const Bundle& bundle) {
  ByteWriter w;
  w.put_raw(std::string_view(kBundleMagic, sizeof(kBundleMagic) - 1));

  const auto& spec = bundle.network.spec();
  w.put(static_cast<std::int32_t>(spec.input_channels));
  w.put(static_cast<std::int32_t>(spec.input_length));
  w.put(static_cast<std::int32_t>(spec.class_count));
  w.put(spec.seed);
  w.put_count(spec.blocks.size());
  for (const auto& b : spec.blocks) {
    w.put(static_cast<std::int32_t>(b.filters));
    w.put(static_cast<std::int32_t>(b.kernel_size));
    w.put(static_cast<std::uint8_t>(b.activation));
  }

  w.put_count(bundle.configs.size());
  for (const auto& c : bundle.configs) {
    w.put(static_cast<std::int32_t>(c.stride));
    w.put(static_cast<std::int32_t>(c.length));
    w.put_bool(c.zero);
    w.put_bool(c.attach);
    w.put_bool(c.notemp);
  }

  w.put_bool(bundle.normalize);
  w.put_doubles(bundle.norm.mean);
  w.put_doubles(bundle.norm.stddev);
  w.put_bool(bundle.metadata.collapse_blocks);
  w.put_bool(bundle.metadata.normalize_by_count);

  const auto params = bundle.network.parameters();
  w.put_count(params.size());
  for (const auto* p : params) {
    w.put_count(p->shape().size());
    for (auto d : p->shape()) w.put(static_cast<std::uint64_t>(d));
    for (double v : p->values()) w.put(v);
  }

  put_shallow(w, bundle.shallow);
  return w.take();
}

Bundle decode_bundle(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.get_raw(sizeof(kBundleMagic) - 1) != std::string_view(kBundleMagic)) {
    throw FormatError("not a PCHX1 bundle (bad magic)");
  }
  NetworkSpec spec;
  spec.input_channels = r.get<std::int32_t>();
  spec.input_length = r.get<std::int32_t>();
  spec.class_count = r.get<std::int32_t>();
  spec.seed = r.get<std::uint64_t>();
  spec.blocks.resize(r.get_count(1024));
  for (auto& b : spec.blocks) {
    b.filters = r.get<std::int32_t>();
    b.kernel_size = r.get<std::int32_t>();
    b.activation = get_enum<Activation>(r, 1);
  }

  Bundle bundle;
  bundle.configs.resize(r.get_count(1024));
  for (auto& c : bundle.configs) {
    c.stride = r.get<std::int32_t>();
    c.length = r.get<std::int32_t>();
    c.zero = r.get_bool();
    c.attach = r.get_bool();
    c.notemp = r.get_bool();
  }
  bundle.normalize = r.get_bool();
  bundle.norm.mean = r.get_doubles();
  bundle.norm.stddev = r.get_doubles();
  if (bundle.norm.mean.size() != bundle.norm.stddev.size()) {
    throw FormatError("bundle: normalization statistics disagree in size");
  }
  bundle.metadata.collapse_blocks = r.get_bool();
  bundle.metadata.normalize_by_count = r.get_bool();

  try {
    bundle.network = Network(spec);
    validate_configs(bundle.configs, spec.input_length);
  } catch (const Error& e) {
    throw FormatError(std::string("bundle: invalid network or patch spec: ") + e.what());
  }
  if (patch_channels(static_cast<int>(bundle.norm.mean.size()), bundle.configs) !=
      spec.input_channels) {
    throw FormatError("bundle: channel count inconsistent with patch configs");
  }
  auto params = bundle.network.parameters();
  if (r.get_count() != params.size()) throw FormatError("bundle: parameter tensor count mismatch");
  for (auto* p : params) {
    std::vector<std::size_t> shape(r.get_count(16));
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (shape != p->shape()) throw FormatError("bundle: parameter shape mismatch");
    for (auto& v : p->values()) v = r.get<double>();
  }

  bundle.shallow = get_shallow(r);
  if (bundle.shallow.class_count != spec.class_count) {
    throw FormatError("bundle: shallow model class count mismatch");
  }
  if (!r.done()) throw FormatError("bundle: trailing bytes");
  return bundle;
}

void save_bundle(const std::filesystem::path& path, const Bundle& bundle) {
  const auto bytes = encode_bundle(bundle);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write bundle " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Bundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open bundle " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_bundle(bytes);
}

}  // namespace patchx
