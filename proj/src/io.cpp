// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#include "crwkv/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace crwkv::io {
namespace {

constexpr char kCtnMagic[4] = {'C', 'R', 'W', 'K'};
constexpr char kPakMagic[8] = {'C', 'R', 'W', 'K', 'P', 'A', 'K', '1'};
constexpr uint32_t kCtnVersion = 1;

// Serialization is little-endian by contract; these helpers write the
// native representation and assert the platform matches.
static_assert(std::endian::native == std::endian::little,
              "ctn serialization assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("ctn: unexpected end of stream");
  return v;
}

}  // namespace

CtnBlob blob_from_tensor(const Tensor& t) {
  if (!t.defined()) throw IoError("ctn: undefined tensor");
  CtnBlob b;
  b.dtype = t.dtype();
  b.dims = t.shape();
  size_t bytes = size_t(t.numel()) * dtype_size(t.dtype());
  b.bytes.resize(bytes);
  if (t.dtype() == Dtype::F32)
    std::memcpy(b.bytes.data(), t.data<float>().data(), bytes);
  else
    std::memcpy(b.bytes.data(), t.data<double>().data(), bytes);
  return b;
}

Tensor tensor_from_blob(const CtnBlob& b) {
  int64_t n = shape_numel(b.dims);
  if (b.bytes.size() != size_t(n) * dtype_size(b.dtype))
    throw IoError("ctn: payload size mismatch");
  if (b.dtype == Dtype::U8) {
    Tensor t = Tensor::zeros(b.dims, Dtype::F32);
    auto d = t.mutable_data<float>();
    for (int64_t i = 0; i < n; ++i)
      d[size_t(i)] = float(b.bytes[size_t(i)]) / 255.0f;
    return t;
  }
  Tensor t = Tensor::zeros(b.dims, b.dtype);
  if (b.dtype == Dtype::F32)
    std::memcpy(t.mutable_data<float>().data(), b.bytes.data(), b.bytes.size());
  else
    std::memcpy(t.mutable_data<double>().data(), b.bytes.data(),
                b.bytes.size());
  return t;
}

void write_ctn(std::ostream& out, const CtnBlob& b) {
  out.write(kCtnMagic, 4);
  put<uint32_t>(out, kCtnVersion);
  put<uint8_t>(out, uint8_t(b.dtype));
  if (b.dims.size() > 255) throw IoError("ctn: too many dimensions");
  put<uint8_t>(out, uint8_t(b.dims.size()));
  for (int64_t d : b.dims) put<uint64_t>(out, uint64_t(d));
  out.write(reinterpret_cast<const char*>(b.bytes.data()),
            std::streamsize(b.bytes.size()));
  if (!out) throw IoError("ctn: write failed");
}

CtnBlob read_ctn(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCtnMagic, 4) != 0)
    throw IoError("ctn: bad magic");
  uint32_t version = get<uint32_t>(in);
  if (version != kCtnVersion)
    throw IoError("ctn: unsupported version " + std::to_string(version));
  uint8_t dt = get<uint8_t>(in);
  if (dt > 2) throw IoError("ctn: unknown dtype tag");
  uint8_t ndim = get<uint8_t>(in);
  CtnBlob b;
  b.dtype = Dtype(dt);
  b.dims.resize(ndim);
  for (auto& d : b.dims) d = int64_t(get<uint64_t>(in));
  size_t bytes = size_t(shape_numel(b.dims)) * dtype_size(b.dtype);
  b.bytes.resize(bytes);
  in.read(reinterpret_cast<char*>(b.bytes.data()), std::streamsize(bytes));
  if (!in) throw IoError("ctn: truncated payload");
  return b;
}

void write_ctn_file(const std::string& path, const CtnBlob& b) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  write_ctn(out, b);
}

CtnBlob read_ctn_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  return read_ctn(in);
}

// ---------------------------------------------------------------------------
// Checkpoint pack.
// ---------------------------------------------------------------------------
namespace {

std::vector<uint8_t> ctn_to_bytes(const CtnBlob& b) {
  std::ostringstream os(std::ios::binary);
  write_ctn(os, b);
  std::string s = os.str();
  return {s.begin(), s.end()};
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& config_text) {
  std::vector<std::string> names(params.names());
  std::vector<std::vector<uint8_t>> blobs;
  blobs.reserve(params.size() + 1);
  for (size_t i = 0; i < params.size(); ++i)
    blobs.push_back(ctn_to_bytes(blob_from_tensor(params.at(int(i)))));
  CtnBlob cfg;
  cfg.dtype = Dtype::U8;
  cfg.dims = {int64_t(config_text.size())};
  cfg.bytes.assign(config_text.begin(), config_text.end());
  names.push_back("__config__");
  blobs.push_back(ctn_to_bytes(cfg));

  uint64_t header = 8 + 4;
  for (const auto& n : names) header += 2 + n.size() + 8 + 8;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  out.write(kPakMagic, 8);
  put<uint32_t>(out, uint32_t(names.size()));
  uint64_t off = header;
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i].size() > 0xffff) throw IoError("checkpoint: name too long");
    put<uint16_t>(out, uint16_t(names[i].size()));
    out.write(names[i].data(), std::streamsize(names[i].size()));
    put<uint64_t>(out, off);
    put<uint64_t>(out, uint64_t(blobs[i].size()));
    off += blobs[i].size();
  }
  for (const auto& b : blobs)
    out.write(reinterpret_cast<const char*>(b.data()),
              std::streamsize(b.size()));
  if (!out) throw IoError("checkpoint: write failed: " + path);
}

std::string load_checkpoint(const std::string& path, ParamStore& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kPakMagic, 8) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  uint32_t count = get<uint32_t>(in);
  struct Entry {
    std::string name;
    uint64_t offset, length;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    uint16_t len = get<uint16_t>(in);
    e.name.resize(len);
    in.read(e.name.data(), len);
    e.offset = get<uint64_t>(in);
    e.length = get<uint64_t>(in);
    if (!in) throw IoError("checkpoint: truncated manifest");
  }
  std::string config_text;
  for (const auto& e : entries) {
    in.seekg(std::streamoff(e.offset));
    if (!in) throw IoError("checkpoint: bad offset for " + e.name);
    if (e.name == "__config__") {
      CtnBlob b = read_ctn(in);
      config_text.assign(b.bytes.begin(), b.bytes.end());
    } else {
      CtnBlob b = read_ctn(in);
      if (b.dtype == Dtype::U8)
        throw IoError("checkpoint: unexpected u8 parameter " + e.name);
      params.add(e.name, tensor_from_blob(b));
    }
  }
  return config_text;
}

// ---------------------------------------------------------------------------
// key=value config text.
// ---------------------------------------------------------------------------
std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key=value, got '" + t + "'");
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// PNG.
// ---------------------------------------------------------------------------
namespace {

struct PngWriteCtx {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteCtx() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngReadCtx {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadCtx() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

uint8_t to_u8(double v) {
  double s = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return uint8_t(s);
}

// All state lives behind one pointer so nothing local to the setjmp frame
// is modified after the jump point (-Wclobbered).
struct PngImageBuf {
  png_uint_32 w = 0, h = 0;
  int color = 0;
  std::vector<uint8_t> data;
  std::vector<png_bytep> rows;
};

bool png_write_all(PngWriteCtx* ctx, PngImageBuf* img) {
  if (setjmp(png_jmpbuf(ctx->png))) return false;
  png_init_io(ctx->png, ctx->fp);
  png_set_IHDR(ctx->png, ctx->info, img->w, img->h, 8, img->color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx->png, ctx->info);
  png_write_image(ctx->png, img->rows.data());
  png_write_end(ctx->png, nullptr);
  return true;
}

}  // namespace

void write_png(const std::string& path, const Tensor& image) {
  Shape s = image.shape();
  int64_t c, h, w;
  if (s.size() == 2) {
    c = 1;
    h = s[0];
    w = s[1];
  } else if (s.size() == 3 && (s[0] == 1 || s[0] == 3)) {
    c = s[0];
    h = s[1];
    w = s[2];
  } else {
    throw IoError("write_png: image must be [H,W], [1,H,W] or [3,H,W]");
  }
  PngImageBuf img;
  img.w = png_uint_32(w);
  img.h = png_uint_32(h);
  img.color = c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  img.data.resize(size_t(h * w * c));
  img.rows.resize(size_t(h));
  for (int64_t y = 0; y < h; ++y) {
    img.rows[size_t(y)] = img.data.data() + size_t(y * w * c);
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch)
        img.data[size_t(y * w * c + x * c + ch)] =
            to_u8(image.at(ch * h * w + y * w + x));
  }
  PngWriteCtx ctx;
  ctx.fp = std::fopen(path.c_str(), "wb");
  if (!ctx.fp) throw IoError("cannot open for write: " + path);
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                    nullptr);
  if (!ctx.png) throw IoError("png: allocation failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw IoError("png: allocation failed");
  if (!png_write_all(&ctx, &img)) throw IoError("png: write error: " + path);
}

namespace {

struct PngDecoded {
  png_uint_32 w = 0, h = 0, channels = 0;
  std::vector<uint8_t> data;
  std::vector<png_bytep> rows;
};

bool png_read_all(PngReadCtx* ctx, PngDecoded* out) {
  if (setjmp(png_jmpbuf(ctx->png))) return false;
  png_init_io(ctx->png, ctx->fp);
  png_set_sig_bytes(ctx->png, 8);
  png_read_info(ctx->png, ctx->info);
  int color = png_get_color_type(ctx->png, ctx->info);
  int depth = png_get_bit_depth(ctx->png, ctx->info);
  if (depth == 16) png_set_strip_16(ctx->png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx->png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(ctx->png);
  if (png_get_valid(ctx->png, ctx->info, PNG_INFO_tRNS))
    png_set_tRNS_to_alpha(ctx->png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(ctx->png);
  png_read_update_info(ctx->png, ctx->info);
  out->w = png_get_image_width(ctx->png, ctx->info);
  out->h = png_get_image_height(ctx->png, ctx->info);
  out->channels = png_get_channels(ctx->png, ctx->info);
  if (out->channels != 1 && out->channels != 3) return true;  // caller checks
  out->data.resize(size_t(out->w) * out->h * out->channels);
  out->rows.resize(out->h);
  for (png_uint_32 y = 0; y < out->h; ++y)
    out->rows[y] = out->data.data() + size_t(y) * out->w * out->channels;
  png_read_image(ctx->png, out->rows.data());
  return true;
}

}  // namespace

Tensor read_png(const std::string& path) {
  PngReadCtx ctx;
  ctx.fp = std::fopen(path.c_str(), "rb");
  if (!ctx.fp) throw IoError("cannot open: " + path);
  uint8_t sig[8];
  if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8))
    throw IoError("not a PNG file: " + path);
  ctx.png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw IoError("png: allocation failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw IoError("png: allocation failed");
  PngDecoded img;
  if (!png_read_all(&ctx, &img)) throw IoError("png: read error: " + path);
  if (img.channels != 1 && img.channels != 3)
    throw IoError("png: unsupported channel count in " + path);

  png_uint_32 w = img.w, h = img.h, channels = img.channels;
  Tensor t = Tensor::zeros({int64_t(channels), int64_t(h), int64_t(w)},
                           Dtype::F32);
  auto d = t.mutable_data<float>();
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (png_uint_32 ch = 0; ch < channels; ++ch)
        d[size_t(ch) * h * w + size_t(y) * w + x] =
            float(img.data[(size_t(y) * w + x) * channels + ch]) / 255.0f;
  return t;
}

Tensor read_image_any(const std::string& path) {
  auto dot = path.find_last_of('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".ctn") {
    Tensor t = tensor_from_blob(read_ctn_file(path));
    if (t.ndim() == 2) t = t.view({1, t.dim(0), t.dim(1)});
    if (t.ndim() != 3) throw IoError("image tensor must be [C,H,W]: " + path);
    return t.dtype() == Dtype::F32 ? t : t.astype(Dtype::F32);
  }
  return read_png(path);
}

}  // namespace crwkv::io
