#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "patchx/app.hpp"
#include "patchx/config.hpp"
#include "patchx/explain.hpp"
#include "patchx/metadata.hpp"
#include "patchx/patching.hpp"
#include "patchx/pipeline.hpp"

namespace py = pybind11;
using namespace patchx;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Labels = py::array_t<int, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a [channels, length] array");
  Matrix m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.data());
  return m;
}

Array from_matrix(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data(), m.data() + m.size(), out.mutable_data());
  return out;
}

Dataset to_dataset(const Array& x, const Labels& y, int class_count) {
  if (x.ndim() != 3) throw DimensionError("expected a [samples, channels, length] array");
  const auto n = x.shape(0);
  const auto c = x.shape(1);
  const auto l = x.shape(2);
  if (y.ndim() != 1 || y.shape(0) != n) throw DimensionError("labels must be a vector with one entry per sample");
  Dataset d;
  d.class_count = class_count;
  const double* src = x.data();
  for (py::ssize_t i = 0; i < n; ++i) {
    TimeSeriesSample s;
    s.id = i;
    s.label = y.at(i);
    s.values = Matrix(c, l);
    std::copy(src + i * c * l, src + (i + 1) * c * l, s.values.data());
    d.samples.push_back(std::move(s));
  }
  return d;
}

Dataset unlabeled(const Array& x) {
  Labels zeros(std::vector<py::ssize_t>{x.ndim() == 3 ? x.shape(0) : 0});
  std::fill(zeros.mutable_data(), zeros.mutable_data() + zeros.size(), 0);
  return to_dataset(x, zeros, 2);
}

py::tuple dataset_arrays(const Dataset& d) {
  const py::ssize_t n = static_cast<py::ssize_t>(d.size());
  Array x({n, static_cast<py::ssize_t>(d.channels()), static_cast<py::ssize_t>(d.length())});
  Labels y(std::vector<py::ssize_t>{n});
  double* dst = x.mutable_data();
  for (const auto& s : d.samples) {
    dst = std::copy(s.values.data(), s.values.data() + s.values.size(), dst);
  }
  int* labels = y.mutable_data();
  for (const auto& s : d.samples) *labels++ = s.label;
  return py::make_tuple(x, y);
}

py::list peak_list(const std::vector<std::optional<PeakMark>>& peaks) {
  py::list out;
  for (const auto& p : peaks) {
    if (p) {
      out.append(py::make_tuple(p->channel, p->position));
    } else {
      out.append(py::none());
    }
  }
  return out;
}

Settings to_settings(const py::dict& d) {
  Settings s;
  for (const auto& [k, v] : d) s[py::str(k)] = py::str(v);
  return s;
}

int infer_classes(const Labels& a, const Labels& b) {
  int top = 1;
  for (const auto* y : {&a, &b}) {
    for (py::ssize_t i = 0; i < y->size(); ++i) top = std::max(top, y->data()[i]);
  }
  return top + 1;
}

Labels to_labels(const std::vector<int>& v) {
  Labels out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array presence_array(const std::vector<ClassPresenceVector>& vectors) {
  const auto dim = vectors.empty() ? 0 : vectors.front().dimension();
  Array out({static_cast<py::ssize_t>(vectors.size()), static_cast<py::ssize_t>(dim)});
  double* dst = out.mutable_data();
  for (const auto& v : vectors) {
    const auto f = v.features();
    dst = std::copy(f.begin(), f.end(), dst);
  }
  return out;
}

TimeSeriesSample single(const Array& x) {
  TimeSeriesSample s;
  s.values = to_matrix(x);
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Patch-based explainable time series classification";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<IndexError>(m, "IndexError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<StageError>(m, "StageError", base.ptr());

  m.def("mix_seed", &mix_seed, py::arg("seed"), py::arg("stream"));

  m.def(
      "enumerate_patches",
      [](int sample_length, int stride, int length) {
        PatchConfig c{stride, length};
        c.validate(sample_length);
        std::vector<std::pair<int, int>> out;
        for (const auto& s : enumerate_patches(sample_length, c)) out.emplace_back(s.start, s.end);
        return out;
      },
      py::arg("sample_length"), py::arg("stride"), py::arg("length"));

  m.def(
      "transform",
      [](const Array& values, int p, int stride, int length, bool attach, bool notemp) {
        PatchConfig c{stride, length, true, attach, notemp};
        TimeSeriesSample s;
        s.values = to_matrix(values);
        c.validate(s.length());
        const auto inst = transform(s, p, c);
        return py::make_tuple(from_matrix(inst.values), inst.valid_start, inst.valid_end);
      },
      py::arg("values"), py::arg("p"), py::arg("stride"), py::arg("length"), py::arg("attach") = true,
      py::arg("notemp") = false);

  m.def(
      "generate_anomaly",
      [](int train, int val, int test, std::uint64_t seed, int length, int channels) {
        AnomalyGenSpec spec;
        spec.train_count = train;
        spec.val_count = val;
        spec.test_count = test;
        spec.seed = seed;
        spec.length = length;
        spec.channels = channels;
        const auto d = generate_anomaly(spec);
        py::dict out;
        out["train"] = dataset_arrays(d.train);
        out["val"] = dataset_arrays(d.val);
        out["test"] = dataset_arrays(d.test);
        out["train_peaks"] = peak_list(d.train_peaks);
        out["val_peaks"] = peak_list(d.val_peaks);
        out["test_peaks"] = peak_list(d.test_peaks);
        return out;
      },
      py::arg("train") = 3500, py::arg("val") = 1500, py::arg("test") = 1000, py::arg("seed") = 0,
      py::arg("length") = 50, py::arg("channels") = 3);

  m.def(
      "extract_presence",
      [](const std::vector<int>& config_indices, const Array& softmax, int config_count) {
        if (softmax.ndim() != 2 || softmax.shape(0) != static_cast<py::ssize_t>(config_indices.size())) {
          throw DimensionError("softmax must be [patches, classes] with one row per config index");
        }
        const int k = static_cast<int>(softmax.shape(1));
        std::vector<PatchPrediction> preds;
        for (std::size_t i = 0; i < config_indices.size(); ++i) {
          const double* row = softmax.data() + i * static_cast<std::size_t>(k);
          preds.push_back({config_indices[i], std::vector<double>(row, row + k)});
        }
        const auto v = extract(0, preds, config_count, k);
        return py::make_tuple(v.features(), v.wins);
      },
      py::arg("config_indices"), py::arg("softmax"), py::arg("config_count"));

  m.def(
      "resolve_config",
      [](const py::dict& settings, std::optional<std::uint64_t> env_seed) {
        return resolve_config(to_settings(settings), env_seed).to_ini();
      },
      py::arg("settings") = py::dict(), py::arg("env_seed") = py::none());

  m.def(
      "gradcheck",
      [](int seeds) {
        GradcheckOptions o;
        o.seeds = seeds;
        std::ostringstream log;
        const auto s = cmd_gradcheck(o, log);
        return py::make_tuple(s.passed, s.max_relative_error, s.lines);
      },
      py::arg("seeds") = 10);

  py::class_<Bundle>(m, "Model")
      .def_static(
          "fit",
          [](const Array& x_train, const Labels& y_train, const Array& x_val, const Labels& y_val,
             const py::dict& settings) {
            const auto cfg = resolve_config(to_settings(settings), std::nullopt);
            const int k = infer_classes(y_train, y_val);
            const auto train = to_dataset(x_train, y_train, k);
            const auto val = to_dataset(x_val, y_val, k);
            py::gil_scoped_release release;
            return fit_pipeline(cfg.pipeline, train, val).bundle;
          },
          py::arg("x_train"), py::arg("y_train"), py::arg("x_val"), py::arg("y_val"),
          py::arg("settings") = py::dict())
      .def_static("load", &load_bundle, py::arg("path"))
      .def_static("from_bytes",
                  [](const py::bytes& b) {
                    const std::string s = b;
                    return decode_bundle(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
                  })
      .def("save", [](const Bundle& b, const std::filesystem::path& p) { save_bundle(p, b); }, py::arg("path"))
      .def("to_bytes",
           [](const Bundle& b) {
             const auto bytes = encode_bundle(b);
             return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
           })
      .def_property_readonly("class_count", &Bundle::class_count)
      .def_property_readonly("sample_channels", &Bundle::sample_channels)
      .def_property_readonly("sample_length", &Bundle::sample_length)
      .def_property_readonly("configs", [](const Bundle& b) { return format_patch_list(b.configs); })
      .def("predict",
           [](const Bundle& b, const Array& x) { return to_labels(predict_split(b, unlabeled(x)).predicted); },
           py::arg("x"))
      .def("presence", [](const Bundle& b, const Array& x) { return presence_array(presence_vectors(b, unlabeled(x))); },
           py::arg("x"))
      .def("explain_json", [](const Bundle& b, const Array& x) { return to_json(explain_sample(b, single(x))).dump(); },
           py::arg("x"))
      .def(
          "probe_json",
          [](const Bundle& b, const Array& x, int channel, int position, const std::vector<double>& factors) {
            return to_json(boundary_probe(b, single(x), channel, position, factors)).dump();
          },
          py::arg("x"), py::arg("channel"), py::arg("position"), py::arg("factors"))
      .def(
          "histogram_json",
          [](const Bundle& b, const Array& x) { return to_json(confidence_histogram(b, unlabeled(x))).dump(); },
          py::arg("x"));
}
