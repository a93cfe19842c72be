// Copyright 2026 The ChangeRWKV Authors. Apache 2.0 License.
#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "crwkv/params.hpp"
#include "crwkv/tensor.hpp"

namespace crwkv::io {

// ---------------------------------------------------------------------------
// .ctn tensor container.  Little-endian throughout:
//   magic "CRWK" | u32 version=1 | u8 dtype (0=f32,1=f64,2=u8) | u8 ndim |
//   ndim x u64 dims | payload (row-major)
// ---------------------------------------------------------------------------
struct CtnBlob {
  Dtype dtype = Dtype::F32;
  Shape dims;
  std::vector<uint8_t> bytes;  // raw little-endian payload
};

CtnBlob blob_from_tensor(const Tensor& t);
Tensor tensor_from_blob(const CtnBlob& b);  // u8 blobs scale to f32 in [0,1]

void write_ctn(std::ostream& out, const CtnBlob& b);
CtnBlob read_ctn(std::istream& in);
void write_ctn_file(const std::string& path, const CtnBlob& b);
CtnBlob read_ctn_file(const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoint pack: a directory of named .ctn blobs in one file.
//   magic "CRWKPAK1" | u32 count | count x { u16 name_len | name |
//   u64 offset | u64 length } | concatenated .ctn payloads
// Offsets are absolute.  The model config rides along as a u8 tensor named
// "__config__" holding key=value text.
// ---------------------------------------------------------------------------
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& config_text);
// Returns the embedded config text; fills `params` (names + tensors, file
// order preserved).
std::string load_checkpoint(const std::string& path, ParamStore& params);

// ---------------------------------------------------------------------------
// key=value config text ('#' comments, blank lines ignored).
// ---------------------------------------------------------------------------
std::map<std::string, std::string> parse_kv(const std::string& text);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// ---------------------------------------------------------------------------
// 8-bit PNG.  Images are [3,H,W] or [1,H,W]/[H,W] tensors in [0,1].
// ---------------------------------------------------------------------------
void write_png(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);  // [3,H,W] or [1,H,W], f32 in [0,1]

// Reads either a PNG or a .ctn by extension; images come back [C,H,W] f32.
Tensor read_image_any(const std::string& path);

}  // namespace crwkv::io
