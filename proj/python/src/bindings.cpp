// Python bindings: kernels, the contrastive critic and loss, MI diagnostics,
// configs, training and inference on saved checkpoints.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

#include "bnn/cmim_loss.hpp"
#include "bnn/commands.hpp"
#include "bnn/config.hpp"
#include "bnn/mi.hpp"
#include "bnn/network.hpp"
#include "bnn/training.hpp"

namespace py = pybind11;
using namespace bnn;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <class T, class A>
BasicTensor<T> to_tensor(const A& a, std::size_t rank = 2) {
  if (static_cast<std::size_t>(a.ndim()) != rank) {
    throw py::value_error("expected a " + std::to_string(rank) + "-d array, got " + std::to_string(a.ndim()) + "-d");
  }
  Shape shape;
  for (py::ssize_t d = 0; d < a.ndim(); ++d) shape.push_back(static_cast<std::size_t>(a.shape(d)));
  std::vector<T> data(a.data(), a.data() + a.size());
  return BasicTensor<T>(std::move(shape), std::move(data));
}

template <class T>
py::array_t<T> to_array(const BasicTensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::memcpy(out.mutable_data(), t.data().data(), t.size() * sizeof(T));
  return out;
}

JointHistogram joint_from(const F64Array& counts) {
  if (counts.ndim() != 2) throw py::value_error("counts must be a 2-d array");
  const std::vector<double> c(counts.data(), counts.data() + counts.size());
  return JointHistogram::from_counts(static_cast<std::size_t>(counts.shape(0)),
                                     static_cast<std::size_t>(counts.shape(1)), c);
}

class Model {
 public:
  explicit Model(const std::string& path) : m_(load_model(path)) {}

  py::array_t<float> logits(const F32Array& x) const { return to_array(forward(m_.net, to_tensor<float>(x)).logits); }

  py::array_t<float> activation(const F32Array& x, std::size_t k) const {
    return to_array(sectional_forward(m_.net, to_tensor<float>(x), k));
  }

  py::dict evaluate_on(const std::string& data_dir) const {
    const Dataset test = load_test_split(m_.config, data_dir.empty() ? m_.config.data_dir : data_dir, m_.norm);
    const EvalResult r = evaluate(m_.net, test);
    py::dict d;
    d["accuracy"] = r.accuracy;
    d["loss"] = r.loss;
    d["correct"] = r.correct;
    d["total"] = r.total;
    return d;
  }

  std::string config() const { return config_to_json(m_.config, 2); }
  std::size_t epochs() const { return m_.epochs_done; }
  std::vector<std::size_t> tap_layers() const { return m_.net.tap_layers; }
  std::size_t depth() const { return m_.net.depth(); }

 private:
  LoadedModel m_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Binary neural networks trained with a contrastive mutual-information objective";

  py::register_exception<Error>(m, "BnnError", PyExc_RuntimeError);

  m.def(
      "xnor_matmul",
      [](const F32Array& x, const F32Array& w) {
        return to_array(xnor_matmul_nt<float>(sign_binarize(to_tensor<float>(x)), sign_binarize(to_tensor<float>(w))));
      },
      py::arg("x"), py::arg("w"),
      "sign(x) @ sign(w).T through the packed popcount kernel; zero maps to +1.");

  m.def(
      "sign_l1_identity",
      [](const F64Array& a) {
        std::vector<double> v(a.data(), a.data() + a.size()), s(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) s[i] = v[i] >= 0.0 ? 1.0 : -1.0;
        return py::make_tuple(fixed_dot<double>(s, v), l1_norm<double>(v));
      },
      py::arg("a"), "(<sign(a), a>, ||a||_1) with the library's fixed summation order.");

  m.def(
      "critic",
      [](double score, double tau, std::size_t n_negatives, std::size_t m_pairs, double log_partition) {
        CriticParams p{tau, n_negatives, m_pairs};
        p.log_partition = log_partition;
        p.validate();
        const CriticScores c = critic_from_score(score, p);
        return py::make_tuple(c.log_h, c.log_1mh);
      },
      py::arg("score"), py::arg("tau"), py::arg("n_negatives"), py::arg("m_pairs"), py::arg("log_partition") = 0.0,
      "(log h, log(1 - h)) for a critic score.");

  m.def(
      "nce_loss",
      [](const F64Array& anchors, const F64Array& positives, const std::vector<std::size_t>& indices,
         const F64Array& bank, double tau, std::size_t n_negatives, std::size_t m_pairs, std::uint64_t seed) {
        const auto values = to_tensor<double>(bank);
        MemoryBank<double> mb(values.rows(), values.cols());
        std::vector<std::size_t> all(values.rows());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        mb.update(all, values);
        CriticParams p{tau, n_negatives, m_pairs};
        p.validate();
        Rng rng(seed);
        const auto r = nce_layer_loss(to_tensor<double>(anchors), to_tensor<double>(positives), indices, mb, p, rng);
        py::dict d;
        d["loss"] = r.loss;
        d["grad_anchor"] = to_array(r.grad_anchor);
        d["grad_fp"] = to_array(r.grad_fp);
        return d;
      },
      py::arg("anchors"), py::arg("positives"), py::arg("indices"), py::arg("bank"), py::arg("tau"),
      py::arg("n_negatives"), py::arg("m_pairs"), py::arg("seed") = 0,
      "One layer's NCE loss against a fully warm memory bank, with gradients.");

  m.def(
      "layer_weight", [](std::size_t k, double beta, std::size_t depth) { return layer_weight(k, beta, depth); },
      py::arg("k"), py::arg("beta"), py::arg("depth"));

  m.def(
      "mutual_information", [](const F64Array& counts) { return mutual_information(joint_from(counts)); },
      py::arg("counts"), "Mutual information (nats) of a joint count table.");

  m.def(
      "verify_nce_bound",
      [](const F64Array& counts, std::size_t n_negatives, std::size_t n_samples, std::uint64_t seed) {
        Rng rng(seed);
        const auto c = verify_nce_bound(joint_from(counts), n_negatives, n_samples, rng);
        py::dict d;
        d["exact_mi"] = c.exact_mi;
        d["bound_estimate"] = c.bound_estimate;
        d["std_error"] = c.std_error;
        d["holds"] = c.holds;
        return d;
      },
      py::arg("counts"), py::arg("n_negatives"), py::arg("n_samples") = 2000, py::arg("seed") = 0);

  m.def(
      "binarized_activation_mi",
      [](const F64Array& a, std::size_t bins) { return binarized_activation_mi(to_tensor<double>(a), bins); },
      py::arg("a_fp"), py::arg("bins") = 16);

  m.def(
      "preset", [](const std::string& name) { return config_to_json(preset_config(name), 2); }, py::arg("name"),
      "A named preset as JSON text.");

  m.def(
      "resolve_config",
      [](const std::string& preset, const std::vector<std::string>& overrides) {
        return config_to_json(resolve_config("", preset, overrides), 2);
      },
      py::arg("preset") = "desk", py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "train",
      [](const std::string& preset, const std::vector<std::string>& overrides, bool resume) {
        TrainOptions t;
        t.config = resolve_config("", preset, overrides);
        t.resume = resume;
        t.quiet = true;
        {
          py::gil_scoped_release release;
          cmd_train(t);
        }
        return t.config.out_dir;
      },
      py::arg("preset") = "desk", py::arg("overrides") = std::vector<std::string>{}, py::arg("resume") = false,
      "Train like the command line does; returns the run directory.");

  m.def(
      "synth",
      [](const std::string& out, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
        write_synth_mnist(out, n_train, n_test, seed);
      },
      py::arg("out"), py::arg("n_train") = 10000, py::arg("n_test") = 2000, py::arg("seed") = 20240601,
      "Write procedural MNIST-format digits as IDX files.");

  py::class_<Model>(m, "Model", "A trained network loaded from a checkpoint")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def("logits", &Model::logits, py::arg("x"), "Eval-mode logits for normalized inputs [n x features].")
      .def("activation", &Model::activation, py::arg("x"), py::arg("k"),
           "Full-precision activation of layer k (logits when k is the depth).")
      .def("evaluate", &Model::evaluate_on, py::arg("data_dir") = "")
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("epochs", &Model::epochs)
      .def_property_readonly("tap_layers", &Model::tap_layers)
      .def_property_readonly("depth", &Model::depth);
}
