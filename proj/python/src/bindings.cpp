#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <vector>

#include "marsrec/eigencam.hpp"
#include "marsrec/mars.hpp"
#include "marsrec/metric_losses.hpp"
#include "marsrec/trainer.hpp"

namespace py = pybind11;
using namespace marsrec;

namespace {

template <typename T>
using carray = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> tensor_from(const carray<T>& a) {
  std::vector<int> shape(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
  return Tensor<T>(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> numpy_from(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

TransformSpec make_spec(double rotation_deg, double translate_x, double translate_y,
                        double brightness, int ref_h, int ref_w) {
  TransformSpec t;
  t.rotation_deg = rotation_deg;
  t.translate_x = translate_x;
  t.translate_y = translate_y;
  t.brightness_factor = brightness;
  t.ref_h = ref_h;
  t.ref_w = ref_w;
  return t;
}

// Wraps a checkpoint as an inference-only embedder; inputs are resized to the
// model's training resolution when they differ.
class Recognizer {
 public:
  explicit Recognizer(const std::string& checkpoint_path) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    in_h_ = ck.config.model.input_h;
    in_w_ = ck.config.model.input_w;
    dim_ = ck.config.model.embedding_dim;
    blocks_ = ck.config.model.num_blocks;
    embed_ = make_embedder(model_from_checkpoint(ck));
  }

  py::array_t<double> embed(const carray<float>& image) const {
    if (image.ndim() != 2) throw InputError("embed: expected a [H, W] image");
    Image img = tensor_from<float>(image);
    if (img.dim(0) != in_h_ || img.dim(1) != in_w_) img = resize_bilinear(img, in_h_, in_w_);
    const Embedding z = embed_(img, 0);
    py::array_t<double> out(static_cast<py::ssize_t>(z.size()));
    std::copy(z.begin(), z.end(), out.mutable_data());
    return out;
  }

  std::pair<int, int> input_shape() const { return {in_h_, in_w_}; }
  int embedding_dim() const { return dim_; }
  int num_blocks() const { return blocks_; }

 private:
  Embedder embed_;
  int in_h_ = 0, in_w_ = 0, dim_ = 0, blocks_ = 0;
};

}  // namespace

PYBIND11_MODULE(_marsrec, m) {
  m.doc() = "Patch-based terrain landmark recognition: view transforms, metric losses, "
            "attention pose normalization, and activation heatmaps.";
  m.attr("__version__") = "1.0.0";

  m.def(
      "warp",
      [](const carray<double>& image, double rotation_deg, double translate_x,
         double translate_y, double brightness) {
        const Tensor<double> img = tensor_from<double>(image);
        if (img.rank() != 2 && img.rank() != 3)
          throw InputError("warp: expected [H, W] or [C, H, W]");
        const TransformSpec t = make_spec(rotation_deg, translate_x, translate_y, brightness,
                                          img.dim(img.rank() - 2), img.dim(img.rank() - 1));
        return numpy_from(apply_transform(img, t));
      },
      py::arg("image"), py::arg("rotation_deg") = 0.0, py::arg("translate_x") = 0.0,
      py::arg("translate_y") = 0.0, py::arg("brightness") = 1.0,
      "Apply a brightness/rotation/translation view transform to an image.");

  m.def(
      "pose_normalize",
      [](const carray<double>& maps, double rotation_deg, double translate_x,
         double translate_y, int ref_h, int ref_w) {
        Tensor<double> t = tensor_from<double>(maps);
        if (t.rank() != 3) throw InputError("pose_normalize: expected [C, H, W] maps");
        const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
        if (ref_h <= 0) ref_h = h;
        if (ref_w <= 0) ref_w = w;
        auto node = ad::constant(t.reshaped({1, c, h, w}));
        const TransformSpec spec =
            make_spec(rotation_deg, translate_x, translate_y, 1.0, ref_h, ref_w);
        const Tensor<double> out = pose_normalize(node, {spec})->value;
        return numpy_from(out.reshaped({c, h, w}));
      },
      py::arg("maps"), py::arg("rotation_deg") = 0.0, py::arg("translate_x") = 0.0,
      py::arg("translate_y") = 0.0, py::arg("ref_h") = 0, py::arg("ref_w") = 0,
      "Undo a view's geometric transform on its attention maps (rescaled inverse warp).");

  m.def(
      "eigencam",
      [](const carray<double>& activations, int out_h, int out_w) {
        const Tensor<double> act = tensor_from<double>(activations);
        return numpy_from(out_h > 0 && out_w > 0 ? eigencam(act, out_h, out_w) : eigencam(act));
      },
      py::arg("activations"), py::arg("out_h") = 0, py::arg("out_w") = 0,
      "First-principal-component heatmap of a [C, H, W] activation stack, min-max scaled.");

  m.def(
      "gem",
      [](const carray<double>& x, double p) {
        auto xn = ad::leaf(tensor_from<double>(x), false);
        auto pn = ad::leaf(Tensor<double>::scalar(p), false);
        return numpy_from(ad::gem_pool(xn, pn)->value);
      },
      py::arg("x"), py::arg("p"),
      "Generalized-mean pooling of [B, C, L] activations to [B, C].");

  m.def(
      "ntxent",
      [](const carray<double>& z, const std::vector<int>& twin, double tau) {
        return ad::ntxent_loss(ad::leaf(tensor_from<double>(z), false), twin, tau)->value[0];
      },
      py::arg("z"), py::arg("twin"), py::arg("tau") = 0.07,
      "Normalized-temperature cross-entropy over twin-paired view embeddings.");

  m.def(
      "supcon",
      [](const carray<double>& z, const std::vector<int>& labels, double tau) {
        return ad::supcon_loss(ad::leaf(tensor_from<double>(z), false), labels, tau)->value[0];
      },
      py::arg("z"), py::arg("labels"), py::arg("tau") = 0.07,
      "Supervised contrastive loss over labeled embeddings.");

  m.def(
      "proxy_anchor",
      [](const carray<double>& z, const carray<double>& proxies, const std::vector<int>& labels,
         double delta, double alpha) {
        return ad::proxy_anchor_loss(ad::leaf(tensor_from<double>(z), false),
                                     ad::leaf(tensor_from<double>(proxies), false), labels, delta,
                                     alpha)
            ->value[0];
      },
      py::arg("z"), py::arg("proxies"), py::arg("labels"), py::arg("delta") = 0.1,
      py::arg("alpha") = 32.0, "Proxy-anchor loss of embeddings against a proxy table.");

  m.def(
      "cosine_pair_mean",
      [](const carray<double>& z) {
        return ad::cosine_pair_mean(ad::leaf(tensor_from<double>(z), false))->value[0];
      },
      py::arg("z"),
      "Mean of 1 - cos(row 2k, row 2k+1) over consecutive row pairs of [2P, D].");

  m.def(
      "ms_mine",
      [](const carray<double>& z, const std::vector<int>& labels, const std::vector<int>& twin,
         double eps) {
        const MinedIndices mi = ms_mine(tensor_from<double>(z), labels, twin, eps);
        py::dict out;
        out["ap"] = mi.ap;
        out["p"] = mi.p;
        out["an"] = mi.an;
        out["n"] = mi.n;
        return out;
      },
      py::arg("z"), py::arg("labels"), py::arg("twin"), py::arg("eps") = 0.1,
      "Multi-similarity mining: twin positives plus cross-label negatives harder than "
      "(hardest-positive similarity - eps).");

  m.def(
      "nms",
      [](const carray<double>& boxes, const carray<double>& scores, double iou_threshold) {
        if (boxes.ndim() != 2 || boxes.shape(1) != 4)
          throw InputError("nms: boxes must be [N, 4] (x, y, w, h)");
        if (scores.ndim() != 1 || scores.shape(0) != boxes.shape(0))
          throw InputError("nms: scores must match boxes");
        std::vector<BoundingBox> bs(static_cast<size_t>(boxes.shape(0)));
        for (py::ssize_t i = 0; i < boxes.shape(0); ++i) {
          bs[static_cast<size_t>(i)] = {boxes.at(i, 0), boxes.at(i, 1), boxes.at(i, 2),
                                        boxes.at(i, 3), static_cast<int>(i), scores.at(i)};
        }
        std::vector<int> keep;
        for (const BoundingBox& b : nms(std::move(bs), iou_threshold)) keep.push_back(b.crater_id);
        return keep;
      },
      py::arg("boxes"), py::arg("scores"), py::arg("iou_threshold") = 0.5,
      "Greedy non-maximum suppression; returns the kept input row indices.");

  m.def(
      "synth_patches",
      [](int n, int res, uint64_t seed) {
        const PatchDataset ds = synth_landmarks(n, res, seed);
        std::vector<py::ssize_t> shape = {n, res, res};
        py::array_t<float> out(shape);
        for (int i = 0; i < n; ++i) {
          const Image img = ds.load_instance(i);
          std::copy(img.data(), img.data() + img.size(),
                    out.mutable_data() + static_cast<py::ssize_t>(i) * res * res);
        }
        return out;
      },
      py::arg("n"), py::arg("res"), py::arg("seed"),
      "Deterministic synthetic landmark patches as a [n, res, res] stack in [0, 1].");

  py::class_<Recognizer>(m, "Recognizer",
                         "Checkpoint-backed embedder for recognition queries.")
      .def(py::init<const std::string&>(), py::arg("checkpoint_path"))
      .def("embed", &Recognizer::embed, py::arg("image"),
           "Embed a grayscale [H, W] image; resized to the model resolution when needed.")
      .def_property_readonly("input_shape", &Recognizer::input_shape)
      .def_property_readonly("embedding_dim", &Recognizer::embedding_dim)
      .def_property_readonly("num_blocks", &Recognizer::num_blocks);
}
