#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "advaug/cli.hpp"
#include "advaug/data/dataset.hpp"
#include "advaug/data/image_io.hpp"
#include "advaug/data/sampling.hpp"
#include "advaug/errors.hpp"
#include "advaug/inference.hpp"
#include "advaug/losses.hpp"
#include "advaug/trainer/checkpoint.hpp"

namespace py = pybind11;
using namespace advaug;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D grayscale array");
  Image im(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy_n(a.data(), im.size(), im.pixels.begin());
  return im;
}

Array to_array(const Image& im) {
  Array a({im.height, im.width});
  std::copy(im.pixels.begin(), im.pixels.end(), a.mutable_data());
  return a;
}

}  // namespace

PYBIND11_MODULE(_advaug, m) {
  m.doc() = "Sketch simplification with adversarial augmentation";

  static py::exception<Error> error(m, "Error");
  static py::exception<ConfigError> config_error(m, "ConfigError", error.ptr());
  static py::exception<CheckpointError> checkpoint_error(m, "CheckpointError", error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      config_error(e.what());
    } catch (const CheckpointError& e) {
      checkpoint_error(e.what());
    } catch (const Error& e) {
      error(e.what());
    }
  });

  py::class_<train::Checkpoint>(m, "Model")
      .def_readonly("input_mean", &train::Checkpoint::input_mean)
      .def_readonly("iteration", &train::Checkpoint::iteration)
      .def_readonly("folded", &train::Checkpoint::folded)
      .def_readonly("pencil_mode", &train::Checkpoint::pencil_mode)
      .def_readonly("regime", &train::Checkpoint::regime)
      .def_property_readonly("has_discriminator",
                             [](const train::Checkpoint& c) { return c.discriminator.has_value(); })
      .def_property_readonly("receptive_radius",
                             [](const train::Checkpoint& c) { return infer::receptive_radius(c.simplifier.spec); });

  m.def("load_checkpoint", &train::load_checkpoint, py::arg("path"));
  m.def("save_checkpoint", &train::save_checkpoint, py::arg("model"), py::arg("path"));
  m.def("fold", &train::fold_for_inference, py::arg("model"),
        "Copy of the model with batch norm folded into the convolutions and D dropped.");

  m.def(
      "simplify",
      [](const train::Checkpoint& model, const Array& image, std::optional<double> threshold, int tile) {
        infer::InferenceOptions opt;
        if (threshold) {
          opt.apply_threshold = true;
          opt.threshold = *threshold;
        }
        if (tile > 0) {
          opt.tiling.enabled = true;
          opt.tiling.tile = tile;
        }
        const Image in = to_image(image);
        Image out;
        {
          py::gil_scoped_release release;
          out = infer::simplify(model, in, opt);
        }
        return to_array(out);
      },
      py::arg("model"), py::arg("image"), py::arg("threshold") = py::none(), py::arg("tile") = 0);

  m.def(
      "threshold_target",
      [](const Array& image, double threshold) { return to_array(data::threshold_target(to_image(image), threshold)); },
      py::arg("image"), py::arg("threshold") = 0.9);
  m.def(
      "mse", [](const Array& a, const Array& b) { return loss::mse_loss(to_image(a), to_image(b)); }, py::arg("prediction"),
      py::arg("target"));
  m.def(
      "midtone_fraction",
      [](const Array& image, double low, double high) { return infer::midtone_fraction(to_image(image), low, high); },
      py::arg("image"), py::arg("low") = 0.1, py::arg("high") = 0.9);
  m.def(
      "midtone_near_strokes",
      [](const Array& output, const Array& reference, double radius) {
        return infer::midtone_near_strokes(to_image(output), to_image(reference), radius);
      },
      py::arg("output"), py::arg("reference"), py::arg("radius") = 2.0);

  m.def(
      "synthesize_pair",
      [](std::uint64_t seed, int canvas) {
        data::SyntheticSketchSpec spec;
        spec.canvas = canvas;
        const data::ImagePair p = data::synthesize_pair(spec, seed);
        return py::make_tuple(to_array(p.x), to_array(p.y));
      },
      py::arg("seed"), py::arg("canvas") = 128, "A (rough, clean) synthetic drawing pair.");

  m.def(
      "read_image", [](const std::filesystem::path& p) { return to_array(data::read_image(p)); }, py::arg("path"));
  m.def(
      "write_png", [](const std::filesystem::path& p, const Array& a) { data::write_png(p, to_image(a)); },
      py::arg("path"), py::arg("image"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "advaug");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
