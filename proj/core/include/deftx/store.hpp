#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "deftx/model.hpp"
#include "deftx/sparse.hpp"

namespace deftx {

// Binary containers, little-endian on every platform, written atomically
// (temp file + rename). Loads validate everything and never hand back a
// partial object; corruption raises a format error with the byte offset.
//
//   DFTX  checkpoint / dense tensor set (full model, head fragment, delta)
//   DFTS  sparse vector
//   DFTM  binary mask
//   DFTC  token corpus (flat ids, sentences separated by EOS)

inline constexpr std::uint32_t kStoreVersion = 1;

struct LoadedCheckpoint {
  ModelSpec spec;
  ParameterSet params;
};

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const ModelSpec& spec);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

void save_sparse_vector(const std::filesystem::path& path, const SparseVector& vec);
SparseVector load_sparse_vector(const std::filesystem::path& path);

void save_mask(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask load_mask(const std::filesystem::path& path);

struct CorpusFile {
  std::uint32_t vocab_size = 0;
  std::int32_t language_id = 0;
  std::uint64_t seed = 0;
  std::vector<std::int32_t> tokens;  // sentences separated by tokens::kEos
};

void save_corpus(const std::filesystem::path& path, const CorpusFile& corpus);
CorpusFile load_corpus(const std::filesystem::path& path);

// Four-byte magic of an existing store file ("DFTX"/"DFTS"/"DFTM").
std::string peek_magic(const std::filesystem::path& path);

// FNV-1a over the raw file bytes.
std::uint64_t file_digest(const std::filesystem::path& path);

}  // namespace deftx
