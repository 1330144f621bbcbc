// Python bindings for the core operations: model building, forward passes,
// training, checkpoints, metrics and the synthetic corpus.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "earconv/data.hpp"
#include "earconv/metrics.hpp"
#include "earconv/model.hpp"
#include "earconv/runtime.hpp"
#include "earconv/synthetic.hpp"
#include "earconv/train.hpp"

namespace py = pybind11;
using namespace earconv;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const FloatArray& arr) {
  if (arr.ndim() < 1 || arr.ndim() > 4) {
    throw ShapeError("arrays of rank 1..4 are supported");
  }
  Shape shape(static_cast<std::size_t>(arr.ndim()));
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<int>(arr.shape(i));
  }
  std::vector<float> values(arr.data(), arr.data() + arr.size());
  return Tensor::from_data(std::move(shape), std::move(values));
}

py::array_t<float> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (int e : t.shape()) {
    shape.push_back(e);
  }
  py::array_t<float> arr(shape);
  std::copy(t.data(), t.data() + t.numel(), arr.mutable_data());
  return arr;
}

Tensor as_batch(const ModelGraph<float>& model, const FloatArray& arr) {
  Tensor t = tensor_from_array(arr);
  if (t.rank() == 3) {
    t = t.reshaped({1, t.extent(0), t.extent(1), t.extent(2)});
  }
  return t;
}

Dataset dataset_from_arrays(const FloatArray& images,
                            const std::vector<int>& labels) {
  if (images.ndim() != 4) {
    throw ShapeError("images must have shape (N, h, w, c)");
  }
  if (static_cast<std::size_t>(images.shape(0)) != labels.size()) {
    throw ShapeError("images and labels differ in count");
  }
  Dataset data;
  const int n = static_cast<int>(images.shape(0));
  const Shape img_shape{static_cast<int>(images.shape(1)),
                        static_cast<int>(images.shape(2)),
                        static_cast<int>(images.shape(3))};
  const std::int64_t stride = checked_numel(img_shape);
  for (int i = 0; i < n; ++i) {
    std::vector<float> values(images.data() + i * stride,
                              images.data() + (i + 1) * stride);
    data.images.push_back(Tensor::from_data(img_shape, std::move(values)));
    data.labels.push_back(labels[static_cast<std::size_t>(i)]);
  }
  return data;
}

TrainConfig config_from_kwargs(double lr, int epochs, int batch_size,
                               double dropout, std::uint64_t seed, bool augment) {
  TrainConfig cfg;
  cfg.learning_rate = lr;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.dropout_rate = dropout;
  cfg.seed = seed;
  cfg.augment = augment;
  cfg.validate();
  return cfg;
}

py::dict report_to_dict(const EvalReport& r) {
  py::dict d;
  d["confusion"] = py::make_tuple(
      py::make_tuple(r.cm.counts[0][0], r.cm.counts[0][1]),
      py::make_tuple(r.cm.counts[1][0], r.cm.counts[1][1]));
  d["accuracy"] = r.accuracy;
  py::dict per_class;
  const char* names[2] = {"female", "male"};
  for (int c = 0; c < 2; ++c) {
    py::dict m;
    m["precision"] = r.per_class[c].precision;
    m["recall"] = r.per_class[c].recall;
    m["degenerate"] = r.per_class[c].degenerate;
    per_class[names[c]] = m;
  }
  d["per_class"] = per_class;
  py::list roc;
  for (const auto& pt : r.roc) {
    roc.append(py::make_tuple(pt.fpr, pt.tpr));
  }
  d["roc"] = roc;
  d["auc"] = r.auc;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dual-pooling ear-image gender classifier core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<RangeError>(m, "RangeError", PyExc_ValueError);
  py::register_exception<LabelError>(m, "LabelError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<LookupError>(m, "LayerLookupError", PyExc_KeyError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<ParseError>(m, "ManifestParseError", PyExc_ValueError);
  py::register_exception<DecodeError>(m, "ImageDecodeError", PyExc_IOError);
  py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);

  m.def("set_thread_count", &set_thread_count, py::arg("n"));
  m.def("thread_count", &thread_count);

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("next_u64", &Rng::next_u64)
      .def("next_double", &Rng::next_double)
      .def("uniform", &Rng::uniform, py::arg("lo"), py::arg("hi"))
      .def(
          "uniform_tensor",
          [](Rng& rng, const Shape& shape, float lo, float hi) {
            return array_from_tensor(uniform_tensor<float>(rng, shape, lo, hi));
          },
          py::arg("shape"), py::arg("lo") = 0.0f, py::arg("hi") = 1.0f);

  py::class_<ModelGraph<float>>(m, "Model")
      .def_readonly("arch", &ModelGraph<float>::arch)
      .def_readonly("seed", &ModelGraph<float>::seed)
      .def_readonly("trained_epochs", &ModelGraph<float>::trained_epochs)
      .def_property_readonly("input_shape",
                             [](const ModelGraph<float>& g) {
                               return py::make_tuple(g.input_h, g.input_w,
                                                     g.input_c);
                             })
      .def_property_readonly("total_params", &ModelGraph<float>::total_params)
      .def_property_readonly("conv_layers", &ModelGraph<float>::conv_layer_ids)
      .def_property_readonly("param_names",
                             [](const ModelGraph<float>& g) {
                               return g.param_names;
                             })
      .def("get_param",
           [](const ModelGraph<float>& g, const std::string& name) {
             for (std::size_t i = 0; i < g.param_names.size(); ++i) {
               if (g.param_names[i] == name) {
                 return array_from_tensor(g.params[i]);
               }
             }
             throw LookupError("unknown parameter '" + name + "'");
           },
           py::arg("name"))
      .def("set_param",
           [](ModelGraph<float>& g, const std::string& name,
              const FloatArray& value) {
             for (std::size_t i = 0; i < g.param_names.size(); ++i) {
               if (g.param_names[i] == name) {
                 Tensor t = tensor_from_array(value);
                 if (!t.same_shape(g.params[i])) {
                   throw ShapeError("value shape does not match parameter '" +
                                    name + "'");
                 }
                 g.params[i] = std::move(t);
                 return;
               }
             }
             throw LookupError("unknown parameter '" + name + "'");
           },
           py::arg("name"), py::arg("value"))
      .def("layer_table",
           [](const ModelGraph<float>& g) {
             const auto shapes = infer_output_shapes(g.layers, g.input_h,
                                                     g.input_w, g.input_c);
             py::list rows;
             for (std::size_t i = 0; i < g.layers.size(); ++i) {
               const auto& l = g.layers[i];
               py::dict row;
               row["id"] = l.id;
               row["display"] = l.display;
               row["kind"] = layer_kind_name(l.kind);
               row["inputs"] = l.in;
               row["kernel"] = l.kernel;
               row["stride"] = l.stride;
               row["padding"] = l.padding == Padding::kSame ? "same" : "valid";
               row["rate"] = l.rate;
               row["output_shape"] = shapes[i];
               row["params"] = l.param_count();
               rows.append(row);
             }
             return rows;
           })
      .def(
          "forward",
          [](const ModelGraph<float>& g, const FloatArray& x, bool train,
             std::uint64_t seed) {
            Tensor batch = as_batch(g, x);
            if (train) {
              Rng rng(seed);
              return array_from_tensor(
                  forward(g, batch, Mode::kTrain, &rng).probs());
            }
            return array_from_tensor(forward(g, batch, Mode::kEval).probs());
          },
          py::arg("x"), py::arg("train") = false, py::arg("seed") = 0)
      .def(
          "feature_maps",
          [](const ModelGraph<float>& g, const FloatArray& x,
             const std::vector<std::string>& ids) {
            Tensor batch = as_batch(g, x);
            py::list maps;
            for (const auto& t : extract_feature_maps(g, batch, ids)) {
              maps.append(array_from_tensor(t));
            }
            return maps;
          },
          py::arg("x"), py::arg("layers"))
      .def("save",
           [](const ModelGraph<float>& g, const std::string& path) {
             save_checkpoint(g, path);
           },
           py::arg("path"));

  m.def("build_earnet",
        [](std::uint64_t seed) { return build_earnet<float>(seed); },
        py::arg("seed") = 0);
  m.def("build_earnet_small",
        [](std::uint64_t seed, int input_hw, int width_div) {
          return build_earnet_small<float>(seed, input_hw, width_div);
        },
        py::arg("seed") = 0, py::arg("input_hw") = 32, py::arg("width_div") = 8);
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def(
      "train",
      [](ModelGraph<float>& model, const FloatArray& images,
         const std::vector<int>& labels, const FloatArray& test_images,
         const std::vector<int>& test_labels, double lr, int epochs,
         int batch_size, double dropout, std::uint64_t seed, bool augment) {
        const Dataset train_set = dataset_from_arrays(images, labels);
        const Dataset test_set = test_labels.empty()
                                     ? Dataset{}
                                     : dataset_from_arrays(test_images,
                                                           test_labels);
        const TrainConfig cfg = config_from_kwargs(lr, epochs, batch_size,
                                                   dropout, seed, augment);
        py::list rows;
        for (const auto& r : train_loop(model, train_set, test_set, cfg)) {
          py::dict row;
          row["epoch"] = r.epoch;
          row["train_loss"] = r.train_loss;
          row["train_acc"] = r.train_acc;
          row["test_acc"] = r.test_acc;
          rows.append(row);
        }
        return rows;
      },
      py::arg("model"), py::arg("images"), py::arg("labels"),
      py::arg("test_images") = FloatArray(), py::arg("test_labels") = std::vector<int>{},
      py::arg("lr") = 0.001, py::arg("epochs") = 100, py::arg("batch_size") = 32,
      py::arg("dropout") = 0.2, py::arg("seed") = 0, py::arg("augment") = true);

  m.def(
      "evaluate",
      [](const ModelGraph<float>& model, const FloatArray& images,
         const std::vector<int>& labels, int batch_size) {
        return report_to_dict(
            evaluate(model, dataset_from_arrays(images, labels), batch_size));
      },
      py::arg("model"), py::arg("images"), py::arg("labels"),
      py::arg("batch_size") = 32);

  m.def(
      "bce_loss",
      [](const FloatArray& probs, const std::vector<int>& labels) {
        const auto res = bce_loss(tensor_from_array(probs), labels);
        return py::make_tuple(res.loss, array_from_tensor(res.grad_probs));
      },
      py::arg("probs"), py::arg("labels"));

  m.def("confusion",
        [](const std::vector<int>& labels, const std::vector<int>& preds) {
          const auto cm = confusion(labels, preds);
          return py::make_tuple(py::make_tuple(cm.counts[0][0], cm.counts[0][1]),
                                py::make_tuple(cm.counts[1][0], cm.counts[1][1]));
        },
        py::arg("labels"), py::arg("predictions"));

  m.def(
      "roc_auc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) {
        const auto res = roc_auc(scores, labels);
        py::list points;
        for (const auto& pt : res.points) {
          points.append(py::make_tuple(pt.fpr, pt.tpr));
        }
        return py::make_tuple(points, res.auc);
      },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "synthetic_dataset",
      [](int count, int hw, std::uint64_t seed) {
        const Dataset d = make_synthetic_dataset(count, hw, seed);
        py::array_t<float> images({count, hw, hw, 3});
        float* dst = images.mutable_data();
        for (const auto& img : d.images) {
          std::copy(img.data(), img.data() + img.numel(), dst);
          dst += img.numel();
        }
        return py::make_tuple(images, d.labels);
      },
      py::arg("count"), py::arg("hw") = 32, py::arg("seed") = 0);

  m.def("write_synthetic_corpus", &write_synthetic_corpus, py::arg("dir"),
        py::arg("count"), py::arg("hw"), py::arg("seed") = 0);
  m.def(
      "decode_and_resize",
      [](const std::string& path, int out_hw) {
        return array_from_tensor(decode_and_resize(path, out_hw));
      },
      py::arg("path"), py::arg("out_hw") = 256);
}
