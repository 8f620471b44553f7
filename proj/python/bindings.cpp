#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "gqtok/codec.hpp"
#include "gqtok/entropy.hpp"
#include "gqtok/quantizer.hpp"
#ifdef GQTOK_WITH_CLI
#include "gqtok/cli.hpp"
#endif

namespace py = pybind11;
using namespace gqtok;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U32 = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F64& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

F64 to_array(const Tensor& t) {
  F64 out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

U32 tokens_array(const TokenGrid& t) {
  U32 out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(t.height), static_cast<py::ssize_t>(t.width),
                                   static_cast<py::ssize_t>(t.groups)});
  std::copy(t.indices.begin(), t.indices.end(), out.mutable_data());
  return out;
}

GroupedLatent grouped(const F64& u, std::size_t groups) {
  if (u.ndim() != 3) throw py::value_error("latent must have shape (h, w, d)");
  const std::size_t d = static_cast<std::size_t>(u.shape(2));
  if (groups == 0 || d % groups != 0) throw py::value_error("groups must divide d");
  QuantConfig c;
  c.groups = groups;
  c.group_channels = d / groups;
  c.validate();
  return group_reshape(to_tensor(u), c);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "gqtok core bindings";

  static py::handle codec_error = py::exception<CodecError>(m, "CodecError", PyExc_ValueError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const CodecError& e) {
      py::object inst = py::reinterpret_borrow<py::object>(codec_error)(e.what());
      inst.attr("kind") = codec_error_name(e.kind());
      PyErr_SetObject(codec_error.ptr(), inst.ptr());
    }
  });

  m.def(
      "quantize",
      [](const F64& u, std::size_t groups) {
        const SignQuantized q = sign_quantize(grouped(u, groups));
        return py::make_tuple(to_array(ungroup(GroupedLatent{q.signs})), tokens_array(q.tokens));
      },
      py::arg("u"), py::arg("groups"), "Signs (h, w, d) and token ids (h, w, g) of a latent (h, w, d).");

  m.def(
      "entropy",
      [](const F64& u, std::size_t groups, double tau, double zeta) {
        const EntropyLossValue v = entropy_loss(soft_assignment(grouped(u, groups), tau), zeta);
        py::dict out;
        out["token"] = v.token_entropy;
        out["codebook"] = v.codebook_entropy;
        out["combined"] = v.combined;
        return out;
      },
      py::arg("u"), py::arg("groups"), py::arg("tau") = 1.0, py::arg("zeta") = 1.0,
      "Grouped token and codebook entropies (nats).");

  m.def(
      "oracle_entropy",
      [](const F64& u, double tau) {
        const ExactEntropy e = oracle_full_entropy(to_tensor(u), tau);
        return py::make_tuple(e.token, e.codebook);
      },
      py::arg("u"), py::arg("tau") = 1.0, "Exact (token, codebook) entropies by enumerating all 2^d codes.");

  m.def("compression_ratio",
        py::overload_cast<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t,
                          std::size_t>(&compression_ratio),
        py::arg("image_height"), py::arg("image_width"), py::arg("channels"), py::arg("bits_per_channel"),
        py::arg("height"), py::arg("width"), py::arg("groups"), py::arg("group_channels"));

  m.def(
      "pack",
      [](const U32& tokens, std::size_t group_channels, std::size_t image_height, std::size_t image_width) {
        if (tokens.ndim() != 3) throw py::value_error("tokens must have shape (h, w, g)");
        TokenGrid t(tokens.shape(0), tokens.shape(1), tokens.shape(2), group_channels);
        std::copy(tokens.data(), tokens.data() + tokens.size(), t.indices.begin());
        const auto bytes = pack(t, image_height, image_width);
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("tokens"), py::arg("group_channels"), py::arg("image_height"), py::arg("image_width"));

  m.def(
      "unpack",
      [](const py::bytes& data) {
        const std::string s = data;
        const DecodedStream d = unpack(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
        py::dict header;
        header["image_height"] = d.header.image_height;
        header["image_width"] = d.header.image_width;
        header["height"] = d.header.height;
        header["width"] = d.header.width;
        header["groups"] = d.header.groups;
        header["group_channels"] = d.header.group_channels;
        return py::make_tuple(header, tokens_array(d.tokens));
      },
      py::arg("data"), "(header dict, tokens (h, w, g)) of a .wtok stream.");

#ifdef GQTOK_WITH_CLI
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int rc;
        {
          py::gil_scoped_release release;
          rc = run_cli(args, out, err);
        }
        return py::make_tuple(rc, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line front end in-process; returns (exit code, stdout, stderr).");
#endif
}
