#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "seqforge/registry.hpp"
#include "seqforge/trainer.hpp"

namespace seqforge {

// On-disk training state. The container is a small sectioned binary file
// (magic "SQFG", a section table, one text section of key-value lines and
// binary sections for parameters and optimizer moments); the full layout
// lives in docs/checkpoint_format.md. Readers accept any version up to
// kCheckpointVersion and lift older trees through the upgrade chain;
// writers always emit the current version.

inline constexpr int kCheckpointVersion = 2;

// the parsed text section: dotted keys -> string values, sorted
using KvTree = std::map<std::string, std::string>;

// FNV-1a 64-bit, the per-section checksum
uint64_t checksum_bytes(const void* data, size_t n);

// Applies upgrade rules from `from_version` up to the current version in
// ascending order; identity when already current. Throws ConfigError for
// a version newer than the engine or a missing chain link.
KvTree upgrade_tree(KvTree tree, int from_version);

// Writes the trainer's full state atomically (temp file + rename): a
// crash mid-save never harms an existing checkpoint at `path`. The bytes
// are a pure function of the state.
void save_checkpoint(const Trainer& tr, const std::string& path);

struct LoadReport {
  int file_version = 0;
  int upgrades_applied = 0;  // chain links walked; 0 for a current file
};

// Rebuilds a trainer from the embedded config snapshot (corpus paths must
// still resolve) and restores parameters, optimizer state, loss scaler,
// and the epoch cursor. Integrity problems (bad magic, checksum, layout
// mismatch) throw IntegrityError; a file from a newer engine throws
// ConfigError.
std::unique_ptr<Trainer> load_checkpoint(const std::string& path,
                                         LoadReport* report = nullptr,
                                         const Registry& reg = global_registry());

// Raw parse for tooling and tests: header + checksums verified, sections
// decoded, no upgrades applied and no engine objects built.
struct RawCheckpoint {
  int version = 0;
  KvTree meta;
  std::vector<float> params;  // canonical-order FP32 payload
  std::vector<float> opt;     // optimizer blobs, concatenated
};
RawCheckpoint read_checkpoint(const std::string& path);

}  // namespace seqforge
