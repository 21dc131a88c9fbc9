#pragma once

// Network intermediate representation: a linear chain of int8 layers described
// by a JSON manifest, with weights and biases stored in a separate raw blob.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fusenet {

enum class Layout { HWC, CHW };

struct TensorShape {
  int h = 1;  // rows
  int w = 1;  // columns
  int c = 1;  // channels
  Layout layout = Layout::HWC;

  std::size_t elements() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c);
  }
  bool same_dims(const TensorShape& o) const { return h == o.h && w == o.w && c == o.c; }
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

enum class Activation { none, relu };

struct QuantParams {
  std::int32_t mult = 1;
  int shift = 0;
  Activation activation = Activation::none;

  static QuantParams identity() { return {}; }
  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

enum class LayerKind { conv3x3, dw3x3, pw, linear, avgpool_global };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view s);
std::string_view to_string(Layout layout);
std::string_view to_string(Activation act);

struct BlobRef {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  friend bool operator==(const BlobRef&, const BlobRef&) = default;
};

struct LayerDesc {
  std::string id;
  LayerKind kind = LayerKind::pw;
  int c_in = 1;
  int c_out = 1;
  int stride = 1;
  int pad = 0;
  QuantParams quant;
  BlobRef weights_ref;
  BlobRef bias_ref;

  friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

// Number of int8 weights a layer of this kind and width must carry.
std::uint64_t weight_count(LayerKind kind, int c_in, int c_out);
// Number of int32 biases (zero for avgpool_global).
std::uint64_t bias_count(LayerKind kind, int c_out);

struct NetworkManifest {
  std::string name;
  TensorShape input;
  std::vector<LayerDesc> layers;
  std::string weights_file;

  friend bool operator==(const NetworkManifest&, const NetworkManifest&) = default;
};

// Raw little-endian weight storage: int8 weights and int32 biases at the
// offsets declared by the manifest.
struct WeightBlob {
  std::vector<std::uint8_t> bytes;

  std::span<const std::int8_t> weights(const BlobRef& ref) const;
  std::vector<std::int32_t> biases(const BlobRef& ref) const;
  std::span<const std::uint8_t> raw(const BlobRef& ref) const;
};

// A manifest together with the blob it was validated against.
struct Network {
  NetworkManifest manifest;
  WeightBlob blob;
};

// Output shape of one layer applied to `in`. Throws ShapeError.
TensorShape output_shape(const LayerDesc& layer, const TensorShape& in);

// Per-layer output shapes of the chain, in layer order. Throws ShapeError.
std::vector<TensorShape> propagate_shapes(const NetworkManifest& net);

// Structural checks on a manifest against its blob: layer invariants, shape
// compatibility, blob extents. Throws ShapeError, BlobError or SchemaError.
void validate(const NetworkManifest& net, std::span<const std::uint8_t> blob);

NetworkManifest parse_manifest(std::string_view text, std::span<const std::uint8_t> blob);

// Canonical JSON text (two-space indent, fixed key order, trailing newline).
std::string serialize_manifest(const NetworkManifest& net);

// Reads a manifest file and the blob named by its weights_file, resolved
// relative to the manifest's directory.
Network load_network(const std::string& manifest_path);
void save_network(const Network& net, const std::string& manifest_path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

// Total parameter count (weights plus biases) of a manifest.
std::uint64_t parameter_count(const NetworkManifest& net);

}  // namespace fusenet
