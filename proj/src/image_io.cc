#include "modcodec/image_io.h"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cstring>
#include <fstream>

#include "modcodec/common.h"

namespace modcodec {

namespace {

uint32_t depth_for_maxval(uint32_t maxval) {
  uint32_t d = 1;
  while ((1u << d) - 1 < maxval) d++;
  return d;
}

// ---------------------------------------------------------------------------
// PNM / PAM

struct TokenReader {
  const uint8_t* p;
  size_t n;
  size_t pos = 0;

  int peek() const { return pos < n ? p[pos] : -1; }
  int get() { return pos < n ? p[pos++] : -1; }

  void skip_space_and_comments() {
    for (;;) {
      int c = peek();
      if (c == '#') {
        while (c != -1 && c != '\n') c = get();
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        get();
      } else {
        return;
      }
    }
  }

  uint64_t read_uint(const char* what) {
    skip_space_and_comments();
    check(peek() >= '0' && peek() <= '9',
          std::string("expected a number for ") + what);
    uint64_t v = 0;
    while (peek() >= '0' && peek() <= '9') {
      v = v * 10 + uint64_t(get() - '0');
      check(v <= 0xFFFFFFFFull, std::string(what) + " out of range");
    }
    return v;
  }

  // a single whitespace byte separates the header from binary samples
  void expect_single_space() {
    int c = get();
    check(c == ' ' || c == '\t' || c == '\r' || c == '\n',
          "missing separator before sample data");
  }
};

void read_binary_samples(TokenReader& tr, uint32_t maxval, size_t count,
                         const std::vector<int32_t*>& dest) {
  size_t bytes_per = maxval > 255 ? 2 : 1;
  check(tr.n - tr.pos >= count * dest.size() * bytes_per,
        "file ends before the sample data does");
  for (size_t i = 0; i < count; i++) {
    for (int32_t* plane : dest) {
      uint32_t v;
      if (bytes_per == 2) {
        v = uint32_t(tr.p[tr.pos]) << 8 | tr.p[tr.pos + 1];
        tr.pos += 2;
      } else {
        v = tr.p[tr.pos++];
      }
      check(v <= maxval, "sample exceeds maxval");
      plane[i] = int32_t(v);
    }
  }
}

void read_ascii_samples(TokenReader& tr, uint32_t maxval, size_t count,
                        const std::vector<int32_t*>& dest) {
  for (size_t i = 0; i < count; i++) {
    for (int32_t* plane : dest) {
      uint64_t v = tr.read_uint("sample");
      check(v <= maxval, "sample exceeds maxval");
      plane[i] = int32_t(v);
    }
  }
}

LoadedImage load_pnm(const std::vector<uint8_t>& bytes) {
  TokenReader tr{bytes.data(), bytes.size()};
  check(tr.get() == 'P', "not a PNM file");
  int kind = tr.get();
  check(kind == '2' || kind == '3' || kind == '5' || kind == '6',
        "unsupported PNM variant");
  bool ascii = kind == '2' || kind == '3';
  uint32_t channels = (kind == '3' || kind == '6') ? 3 : 1;

  uint64_t w = tr.read_uint("width");
  uint64_t h = tr.read_uint("height");
  uint64_t maxval = tr.read_uint("maxval");
  check(w >= 1 && h >= 1 && w <= (1u << 30) && h <= (1u << 30),
        "bad PNM dimensions");
  check(maxval >= 1 && maxval <= 65535, "bad PNM maxval");

  if (!ascii) tr.expect_single_space();
  // size feasibility before allocating anything dimension-sized; ASCII
  // samples need at least a digit plus a separator each
  uint64_t count = w * h * channels;
  uint64_t avail = tr.n - tr.pos;
  if (ascii) {
    check(count * 2 <= avail + 1, "file too short for its header");
  } else {
    check(count * (maxval > 255 ? 2 : 1) <= avail,
          "file too short for its header");
  }

  LoadedImage out;
  out.num_color_channels = channels;
  out.image.width = uint32_t(w);
  out.image.height = uint32_t(h);
  out.image.bit_depth = depth_for_maxval(uint32_t(maxval));
  std::vector<int32_t*> planes;
  for (uint32_t c = 0; c < channels; c++) {
    out.image.channels.emplace_back(uint32_t(w), uint32_t(h));
    planes.push_back(out.image.channels.back().samples.data());
  }
  if (ascii) {
    read_ascii_samples(tr, uint32_t(maxval), size_t(w) * h, planes);
  } else {
    read_binary_samples(tr, uint32_t(maxval), size_t(w) * h, planes);
  }
  return out;
}

LoadedImage load_pam(const std::vector<uint8_t>& bytes) {
  TokenReader tr{bytes.data(), bytes.size()};
  check(tr.get() == 'P' && tr.get() == '7', "not a PAM file");

  uint64_t w = 0, h = 0, depth = 0, maxval = 0;
  for (;;) {
    tr.skip_space_and_comments();
    std::string word;
    while (tr.peek() > ' ') word.push_back(char(tr.get()));
    check(!word.empty(), "unterminated PAM header");
    if (word == "ENDHDR") break;
    if (word == "WIDTH") w = tr.read_uint("WIDTH");
    else if (word == "HEIGHT") h = tr.read_uint("HEIGHT");
    else if (word == "DEPTH") depth = tr.read_uint("DEPTH");
    else if (word == "MAXVAL") maxval = tr.read_uint("MAXVAL");
    else if (word == "TUPLTYPE") {
      tr.skip_space_and_comments();
      while (tr.peek() != -1 && tr.peek() != '\n') tr.get();
    } else {
      fail("unknown PAM header field: " + word);
    }
  }
  {
    int c = tr.get();
    check(c == '\n' || c == '\r', "ENDHDR must end its line");
    if (c == '\r' && tr.peek() == '\n') tr.get();
  }
  check(w >= 1 && h >= 1 && w <= (1u << 30) && h <= (1u << 30),
        "bad PAM dimensions");
  check(depth >= 1 && depth <= 4, "PAM depth must be 1..4");
  check(maxval >= 1 && maxval <= 65535, "bad PAM maxval");
  check(w * h * depth * (maxval > 255 ? 2 : 1) <= tr.n - tr.pos,
        "file too short for its header");

  LoadedImage out;
  out.num_color_channels = depth >= 3 ? 3 : 1;
  out.image.width = uint32_t(w);
  out.image.height = uint32_t(h);
  out.image.bit_depth = depth_for_maxval(uint32_t(maxval));
  std::vector<int32_t*> planes;
  for (uint32_t c = 0; c < depth; c++) {
    out.image.channels.emplace_back(uint32_t(w), uint32_t(h));
    planes.push_back(out.image.channels.back().samples.data());
  }
  read_binary_samples(tr, uint32_t(maxval), size_t(w) * h, planes);
  return out;
}

void append_text(std::vector<uint8_t>& out, const std::string& s) {
  out.insert(out.end(), s.begin(), s.end());
}

void append_binary_samples(std::vector<uint8_t>& out, const Image& img,
                           uint32_t maxval) {
  size_t count = size_t(img.width) * img.height;
  for (size_t i = 0; i < count; i++) {
    for (const Channel& ch : img.channels) {
      uint32_t v = uint32_t(ch.samples[i]);
      if (maxval > 255) {
        out.push_back(uint8_t(v >> 8));
        out.push_back(uint8_t(v));
      } else {
        out.push_back(uint8_t(v));
      }
    }
  }
}

std::vector<uint8_t> encode_pnm_bytes(const Image& img) {
  check(img.bit_depth <= 16, "PNM supports up to 16-bit samples");
  check(img.channels.size() == 1 || img.channels.size() == 3,
        "PNM holds exactly one or three channels; use .pam or .png for alpha");
  uint32_t maxval = (1u << img.bit_depth) - 1;
  std::vector<uint8_t> out;
  append_text(out, img.channels.size() == 1 ? "P5\n" : "P6\n");
  append_text(out, std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n" +
                       std::to_string(maxval) + "\n");
  append_binary_samples(out, img, maxval);
  return out;
}

std::vector<uint8_t> encode_pam_bytes(const Image& img,
                                      uint32_t num_color_channels) {
  check(img.bit_depth <= 16, "PAM supports up to 16-bit samples");
  size_t nc = img.channels.size();
  check(nc >= 1 && nc <= 4, "PAM holds one to four channels");
  static const char* kTupl[5] = {"", "GRAYSCALE", "GRAYSCALE_ALPHA", "RGB",
                                 "RGB_ALPHA"};
  check((num_color_channels == 1 && nc <= 2) ||
            (num_color_channels == 3 && nc >= 3),
        "channel layout does not fit a PAM tuple type");
  uint32_t maxval = (1u << img.bit_depth) - 1;
  std::vector<uint8_t> out;
  append_text(out, "P7\n");
  append_text(out, "WIDTH " + std::to_string(img.width) + "\n");
  append_text(out, "HEIGHT " + std::to_string(img.height) + "\n");
  append_text(out, "DEPTH " + std::to_string(nc) + "\n");
  append_text(out, "MAXVAL " + std::to_string(maxval) + "\n");
  append_text(out, std::string("TUPLTYPE ") + kTupl[nc] + "\n");
  append_text(out, "ENDHDR\n");
  append_binary_samples(out, img, maxval);
  return out;
}

// ---------------------------------------------------------------------------
// PNG via libpng. All C++ objects are created before the setjmp target so a
// longjmp from libpng never skips a destructor.

struct PngByteReader {
  const uint8_t* data;
  size_t size;
  size_t pos;
};

extern "C" {

void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
  PngByteReader* r = static_cast<PngByteReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->size) png_error(png, "unexpected end of file");
  std::memcpy(out, r->data + r->pos, n);
  r->pos += n;
}

void png_write_cb(png_structp png, png_bytep data, png_size_t n) {
  std::vector<uint8_t>* out =
      static_cast<std::vector<uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_flush_cb(png_structp) {}

void png_error_cb(png_structp png, png_const_charp msg) {
  std::string* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  longjmp(png_jmpbuf(png), 1);
}

void png_warning_cb(png_structp, png_const_charp) {}

}  // extern "C"

LoadedImage load_png(const std::vector<uint8_t>& bytes) {
  LoadedImage out;
  std::string err;
  std::vector<uint8_t> data;
  std::vector<png_bytep> rows;
  PngByteReader reader{bytes.data(), bytes.size(), 0};
  uint32_t w = 0, h = 0, channels = 0, depth = 0, sig_depth = 0;
  bool icc = false;

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err,
                                           png_error_cb, png_warning_cb);
  check(png != nullptr, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("invalid PNG: " + err);
  }

  png_set_read_fn(png, &reader, png_read_cb);
  png_read_info(png, info);

  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  depth = png_get_bit_depth(png, info);
  icc = png_get_valid(png, info, PNG_INFO_iCCP) != 0;

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);

  // significant-bit markers survive a round trip through our own writer
  if (color != PNG_COLOR_TYPE_PALETTE) {
    png_color_8p sig = nullptr;
    if (png_get_sBIT(png, info, &sig) && sig) {
      if (color & PNG_COLOR_MASK_COLOR)
        sig_depth = std::max({uint32_t(sig->red), uint32_t(sig->green),
                              uint32_t(sig->blue)});
      else
        sig_depth = sig->gray;
      if (color & PNG_COLOR_MASK_ALPHA)
        sig_depth = std::max(sig_depth, uint32_t(sig->alpha));
    }
  }

  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  channels = png_get_channels(png, info);
  depth = png_get_bit_depth(png, info);
  size_t rowbytes = png_get_rowbytes(png, info);
  data.resize(rowbytes * h);
  rows.resize(h);
  for (uint32_t y = 0; y < h; y++) rows[y] = data.data() + size_t(y) * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  check(depth == 8 || depth == 16, "unsupported PNG bit depth");
  check(channels >= 1 && channels <= 4, "unsupported PNG channel count");
  check(w >= 1 && h >= 1, "empty PNG");

  out.num_color_channels = channels >= 3 ? 3 : 1;
  out.image.width = w;
  out.image.height = h;
  out.image.bit_depth = depth;
  for (uint32_t c = 0; c < channels; c++) out.image.channels.emplace_back(w, h);

  size_t count = size_t(w) * h;
  int32_t max_seen = 0;
  for (size_t i = 0; i < count; i++) {
    for (uint32_t c = 0; c < channels; c++) {
      uint32_t v;
      if (depth == 16) {
        const uint8_t* p = data.data() + (i * channels + c) * 2;
        v = uint32_t(p[0]) << 8 | p[1];
      } else {
        v = data[i * channels + c];
      }
      out.image.channels[c].samples[i] = int32_t(v);
      max_seen = std::max(max_seen, int32_t(v));
    }
  }
  // trust sBIT only when the samples actually fit it
  if (sig_depth >= 1 && sig_depth < depth &&
      max_seen < (int32_t(1) << sig_depth)) {
    out.image.bit_depth = sig_depth;
  }
  if (icc)
    out.warnings.push_back(
        "embedded ICC profile ignored; samples are treated as sRGB");
  return out;
}

}  // namespace

std::vector<uint8_t> encode_png_bytes(const Image& img,
                                      uint32_t num_color_channels) {
  check(img.bit_depth >= 1 && img.bit_depth <= 16,
        "PNG supports up to 16-bit samples");
  size_t nc = img.channels.size();
  check((num_color_channels == 1 && nc <= 2) ||
            (num_color_channels == 3 && (nc == 3 || nc == 4)),
        "channel layout does not fit a PNG color type");
  for (const Channel& ch : img.channels)
    check(ch.width == img.width && ch.height == img.height,
          "channel dimensions must match the image");

  int color_type;
  switch (nc) {
    case 1: color_type = PNG_COLOR_TYPE_GRAY; break;
    case 2: color_type = PNG_COLOR_TYPE_GRAY_ALPHA; break;
    case 3: color_type = PNG_COLOR_TYPE_RGB; break;
    default: color_type = PNG_COLOR_TYPE_RGB_ALPHA; break;
  }
  uint32_t out_depth = img.bit_depth <= 8 ? 8 : 16;

  std::string err;
  std::vector<uint8_t> out;
  std::vector<uint8_t> data;
  std::vector<png_bytep> rows;

  size_t rowbytes = size_t(img.width) * nc * (out_depth / 8);
  data.resize(rowbytes * img.height);
  size_t count = size_t(img.width) * img.height;
  for (size_t i = 0; i < count; i++) {
    for (size_t c = 0; c < nc; c++) {
      uint32_t v = uint32_t(img.channels[c].samples[i]);
      if (out_depth == 16) {
        data[(i * nc + c) * 2] = uint8_t(v >> 8);
        data[(i * nc + c) * 2 + 1] = uint8_t(v);
      } else {
        data[i * nc + c] = uint8_t(v);
      }
    }
  }
  rows.resize(img.height);
  for (uint32_t y = 0; y < img.height; y++)
    rows[y] = data.data() + size_t(y) * rowbytes;

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err,
                                            png_error_cb, png_warning_cb);
  check(png != nullptr, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("PNG encoding failed: " + err);
  }

  png_set_write_fn(png, &out, png_write_cb, png_flush_cb);
  png_set_IHDR(png, info, img.width, img.height, int(out_depth), color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (img.bit_depth != out_depth) {
    png_color_8 sig{};
    sig.gray = sig.red = sig.green = sig.blue = png_byte(img.bit_depth);
    if (nc == 2 || nc == 4) sig.alpha = png_byte(img.bit_depth);
    png_set_sBIT(png, info, &sig);
  }
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open " + path);
  f.seekg(0, std::ios::end);
  std::streamoff size = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  check(f.good(), "cannot read " + path);
  return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          std::streamsize(bytes.size()));
  f.flush();
  check(f.good(), "cannot write " + path);
}

LoadedImage load_image(const std::string& path) {
  std::vector<uint8_t> bytes = read_file(path);
  check(bytes.size() >= 8, "file too short to hold an image");
  static const uint8_t kPngMagic[4] = {0x89, 'P', 'N', 'G'};
  if (std::memcmp(bytes.data(), kPngMagic, 4) == 0) return load_png(bytes);
  if (bytes[0] == 'P') {
    if (bytes[1] == '7') return load_pam(bytes);
    if (bytes[1] == '2' || bytes[1] == '3' || bytes[1] == '5' ||
        bytes[1] == '6')
      return load_pnm(bytes);
  }
  fail("unrecognized image format in " + path);
}

void save_image(const Image& image, uint32_t num_color_channels,
                const std::string& path) {
  check(num_color_channels == 1 || num_color_channels == 3,
        "color channel count must be 1 or 3");
  check(image.channels.size() >= num_color_channels, "missing channels");
  std::string ext;
  size_t dot = path.rfind('.');
  if (dot != std::string::npos) ext = path.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });

  if (ext == "png") {
    write_file(path, encode_png_bytes(image, num_color_channels));
  } else if (ext == "pam") {
    write_file(path, encode_pam_bytes(image, num_color_channels));
  } else if (ext == "pgm") {
    check(image.channels.size() == 1, "PGM holds exactly one channel");
    write_file(path, encode_pnm_bytes(image));
  } else if (ext == "ppm") {
    check(image.channels.size() == 3 && num_color_channels == 3,
          "PPM holds exactly three color channels");
    write_file(path, encode_pnm_bytes(image));
  } else if (ext == "pnm") {
    write_file(path, encode_pnm_bytes(image));
  } else {
    fail("unsupported output extension ." + ext +
         " (use .png, .pgm, .ppm, .pnm or .pam)");
  }
}

}  // namespace modcodec
