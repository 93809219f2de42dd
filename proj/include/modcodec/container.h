#pragma once

#include <cstdint>
#include <vector>

#include "modcodec/bitio.h"
#include "modcodec/image.h"
#include "modcodec/modular.h"
#include "modcodec/transforms.h"

namespace modcodec {

inline constexpr uint8_t kSignature[2] = {0x4A, 0x58};
inline constexpr uint32_t kContainerVersion = 1;
inline constexpr uint32_t kMaxImageDim = 1u << 30;
inline constexpr uint32_t kMaxExtraChannels = 4096;
// Residuals of values beyond 28 bits can leave the 32-bit coding domain, so
// the encoder refuses them; the decoder stays permissive up to 31 and relies
// on per-sample range checks instead.
inline constexpr uint32_t kMaxEncodeBitDepth = 28;

// ---------------------------------------------------------------------------
// Headers

// Exif-style orientation: 1 identity, 2 mirror-x, 3 rotate 180, 4 mirror-y,
// 5 transpose, 6 rotate 90 CW, 7 anti-transpose, 8 rotate 90 CCW. Planes are
// coded in stored order; the decoder orients them before returning.
struct ImageHeader {
  uint32_t stored_width = 0;
  uint32_t stored_height = 0;
  uint32_t orientation = 1;
  uint32_t bit_depth = 8;
  uint32_t num_color_channels = 3;
  uint32_t num_extra_channels = 0;
  bool xyb = false;  // color planes hold quantized opponent values

  bool transposed() const { return orientation >= 5; }
  uint32_t display_width() const {
    return transposed() ? stored_height : stored_width;
  }
  uint32_t display_height() const {
    return transposed() ? stored_width : stored_height;
  }
  uint32_t num_channels() const {
    return num_color_channels + num_extra_channels;
  }
};

void write_image_header(BitWriter& bw, const ImageHeader& h);
ImageHeader read_image_header(BitReader& br);

struct FrameHeader {
  uint32_t group_size_shift = 1;  // group dim = 128 << shift
  bool progressive = false;
  // Quantization scales for the opponent planes, present only with xyb.
  uint32_t scale_x = 4096;
  uint32_t scale_y = 1024;
  uint32_t scale_b = 4096;

  uint32_t group_dim() const { return 128u << group_size_shift; }
};

void write_frame_header(BitWriter& bw, const FrameHeader& f, bool xyb);
FrameHeader read_frame_header(BitReader& br, bool xyb);

// ---------------------------------------------------------------------------
// Table of contents

// perm[i] is the canonical index of the section stored at file position i.
// Canonical order: the global section, then groups in row-major order.
std::vector<uint32_t> lehmer_code(const std::vector<uint32_t>& perm);
std::vector<uint32_t> lehmer_decode(const std::vector<uint32_t>& code,
                                    size_t n);
void write_permutation(BitWriter& bw, const std::vector<uint32_t>& perm);
std::vector<uint32_t> read_permutation(BitReader& br, uint32_t n);

struct Toc {
  std::vector<uint32_t> sizes;  // section byte lengths in file order
  std::vector<uint32_t> perm;   // identity when the permuted bit is clear
  bool permuted = false;
};

void write_toc(BitWriter& bw, const std::vector<uint32_t>& sizes,
               const std::vector<uint32_t>* perm);
Toc read_toc(BitReader& br, uint32_t num_sections);

// ---------------------------------------------------------------------------
// Orientation

Image apply_orientation(const Image& stored, uint32_t orientation);
Image undo_orientation(const Image& display, uint32_t orientation);

// ---------------------------------------------------------------------------
// Whole-image coding

struct EncodeParams {
  uint32_t effort = 3;
  uint32_t group_size_shift = 1;
  bool progressive = false;
  bool center_first = false;  // store groups closest to the center first
  bool lossy = false;         // quantized opponent color, squeezed
  uint32_t scale_x = 4096;
  uint32_t scale_y = 1024;
  uint32_t scale_b = 4096;
  uint32_t orientation = 1;
  uint32_t num_color_channels = 3;  // remaining channels are extra
  uint32_t num_threads = 1;
};

// The image is in display orientation; samples must lie in [0, 2^depth).
std::vector<uint8_t> encode_image(const Image& image,
                                  const EncodeParams& params = {});

struct DecodeOptions {
  uint32_t num_threads = 1;
};

Image decode_image(const std::vector<uint8_t>& bytes,
                   ImageHeader* header = nullptr,
                   const DecodeOptions& opts = {});

// Decodes only the sections the requested display-space rectangle needs;
// the result has exactly w x h pixels.
Image decode_roi(const std::vector<uint8_t>& bytes, uint32_t x, uint32_t y,
                 uint32_t w, uint32_t h, ImageHeader* header = nullptr,
                 const DecodeOptions& opts = {});

struct ProgressiveInfo {
  uint32_t sections_total = 0;
  uint32_t sections_used = 0;
  std::vector<uint32_t> used;  // canonical indices of decoded sections
};

// Decodes whatever sections are fully contained in a byte prefix of a file.
// The headers, the table of contents and the global section must be present;
// missing groups leave their residuals zero, which under a squeeze chain
// yields a smooth preview.
Image decode_progressive(const std::vector<uint8_t>& prefix,
                         ProgressiveInfo* info = nullptr,
                         ImageHeader* header = nullptr);

// Canonical indices of sections not fully contained in the byte prefix.
// Needs intact headers and table of contents.
std::vector<uint32_t> missing_sections(const std::vector<uint8_t>& prefix);

// ---------------------------------------------------------------------------
// Inspection

struct ContainerInfo {
  ImageHeader header;
  FrameHeader frame;
  bool permuted = false;
  std::vector<uint32_t> perm;   // canonical index per file position
  std::vector<uint32_t> sizes;  // section byte lengths in file order
  uint32_t header_bytes = 0;    // signature through end of the aligned TOC
  std::vector<TransformSpec> chain;
  bool has_global_tree = false;
  MaTree tree;  // empty unless has_global_tree
  uint32_t tree_nodes = 0;
  uint32_t tree_leaves = 0;
  bool has_global_channels = false;
};

// Parses structure without decoding pixel payloads.
ContainerInfo inspect_container(const std::vector<uint8_t>& bytes);

}  // namespace modcodec
