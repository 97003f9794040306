#include "seqforge/checkpoint.hpp"

#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>

#include "seqforge/common.hpp"

namespace seqforge {

static_assert(std::endian::native == std::endian::little,
              "the checkpoint format fixes little-endian scalars");

uint64_t checksum_bytes(const void* data, size_t n) {
  // FNV-1a 64
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 14695981039346656037ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'F', 'G'};

std::string hexfloat(double x) {
  char b[64];
  std::snprintf(b, sizeof b, "%a", x);
  return b;
}

void put_u16(std::string& out, uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); }
void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

const std::string& tree_at(const KvTree& t, const std::string& key) {
  auto it = t.find(key);
  if (it == t.end()) throw IntegrityError("checkpoint missing key '" + key + "'");
  return it->second;
}

int64_t parse_i64(const KvTree& t, const std::string& key) {
  const std::string& s = tree_at(t, key);
  errno = 0;
  char* end = nullptr;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (errno != 0 || end == s.c_str() || *end != '\0')
    throw IntegrityError("checkpoint key '" + key + "' is not an integer: '" + s + "'");
  return v;
}

double parse_real(const KvTree& t, const std::string& key) {
  const std::string& s = tree_at(t, key);
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (errno != 0 || end == s.c_str() || *end != '\0')
    throw IntegrityError("checkpoint key '" + key + "' is not a number: '" + s + "'");
  return v;
}

const char* prov_name(Config::Provenance p) {
  switch (p) {
    case Config::Provenance::User: return "user";
    case Config::Provenance::Architecture: return "arch";
    default: return "default";
  }
}

std::string manifest_line(const ParamManifestEntry& e) {
  std::string v = e.name + " ";
  for (size_t d = 0; d < e.shape.size(); ++d) {
    if (d) v += "x";
    v += std::to_string(e.shape[d]);
  }
  v += " " + std::to_string(e.offset) + " " + std::to_string(e.numel);
  return v;
}

KvTree build_meta(const Trainer& tr) {
  KvTree t;
  const Config& cfg = tr.config();
  for (const std::string& k : cfg.keys()) {
    const std::string v = cfg.value_string(k);
    if (v.find('\n') != std::string::npos)
      throw ConfigError("config value for '" + k + "' contains a newline");
    t["config." + k] = v;
    t["origin." + k] = prov_name(cfg.provenance(k));
  }

  const auto& man = tr.model().manifest();
  t["model.params"] = std::to_string(tr.model().num_params());
  t["model.tensors"] = std::to_string(man.size());
  char key[32];
  for (size_t i = 0; i < man.size(); ++i) {
    std::snprintf(key, sizeof key, "param.%04zu", i);
    t[key] = manifest_line(man[i]);
  }

  const auto blobs = tr.optimizer().state_blobs();
  t["opt.step_count"] = std::to_string(tr.optimizer().step_count());
  t["opt.blobs"] = std::to_string(blobs.size());
  int64_t off = 0;
  for (size_t i = 0; i < blobs.size(); ++i) {
    std::snprintf(key, sizeof key, "opt.blob.%02zu", i);
    t[key] = blobs[i].first + " " + std::to_string(off) + " " +
             std::to_string(blobs[i].second.size());
    off += static_cast<int64_t>(blobs[i].second.size());
  }

  t["loss_scaler.window"] = std::to_string(cfg.get_int("fp16_scale_window"));
  if (tr.fp16()) {
    t["loss_scaler.scale"] = hexfloat(tr.scaler().scale());
    t["loss_scaler.successes"] = std::to_string(tr.scaler().successes());
  }

  t["progress.step"] = std::to_string(tr.step());
  t["progress.epoch"] = std::to_string(tr.epoch());
  t["progress.cursor"] = std::to_string(tr.cursor());

  // the counter-based streams are fully determined by these bases
  t["rng.seed"] = std::to_string(cfg.get_int("seed"));
  t["rng.dropout_base"] =
      std::to_string(tr.step() * static_cast<int64_t>(tr.workers()) * tr.accum());
  t["rng.shuffle_epoch"] = std::to_string(tr.epoch());
  return t;
}

struct Section {
  std::string name;
  std::string bytes;
};

std::string assemble(int version, const std::vector<Section>& secs) {
  std::string table;
  size_t header = 4 + 4 + 4;
  for (const Section& s : secs) header += 2 + s.name.size() + 8 + 8 + 8;
  size_t off = header;
  for (const Section& s : secs) {
    put_u16(table, static_cast<uint16_t>(s.name.size()));
    table += s.name;
    put_u64(table, off);
    put_u64(table, s.bytes.size());
    put_u64(table, checksum_bytes(s.bytes.data(), s.bytes.size()));
    off += s.bytes.size();
  }
  std::string out;
  out.reserve(off);
  out.append(kMagic, 4);
  put_u32(out, static_cast<uint32_t>(version));
  put_u32(out, static_cast<uint32_t>(secs.size()));
  out += table;
  for (const Section& s : secs) out += s.bytes;
  return out;
}

}  // namespace

KvTree upgrade_tree(KvTree tree, int from_version) {
  if (from_version > kCheckpointVersion)
    throw ConfigError("checkpoint version " + std::to_string(from_version) +
                      " is newer than this engine (" +
                      std::to_string(kCheckpointVersion) + ")");
  for (int v = from_version; v < kCheckpointVersion; ++v) {
    switch (v) {
      case 1:
        // v1 -> v2: the scaler window becomes an explicit tree key; take
        // the config's value when the snapshot has one
        if (!tree.count("loss_scaler.window")) {
          auto it = tree.find("config.fp16_scale_window");
          tree["loss_scaler.window"] = it != tree.end() ? it->second : "256";
        }
        break;
      default:
        throw ConfigError("no upgrade rule from checkpoint version " +
                          std::to_string(v));
    }
  }
  return tree;
}

void save_checkpoint(const Trainer& tr, const std::string& path) {
  KvTree meta = build_meta(tr);
  std::string meta_bytes;
  for (const auto& [k, v] : meta) meta_bytes += k + " = " + v + "\n";

  const auto params = tr.model().params();
  std::string param_bytes(reinterpret_cast<const char*>(params.data()),
                          params.size() * sizeof(float));

  std::string opt_bytes;
  for (const auto& [name, blob] : tr.optimizer().state_blobs())
    opt_bytes.append(reinterpret_cast<const char*>(blob.data()),
                     blob.size() * sizeof(float));

  const std::string out = assemble(
      kCheckpointVersion,
      {{"meta", std::move(meta_bytes)}, {"params", std::move(param_bytes)},
       {"opt", std::move(opt_bytes)}});

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint '" + tmp + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) {
      std::remove(tmp.c_str());
      throw IoError("failed writing checkpoint '" + tmp + "'");
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("cannot move checkpoint into place at '" + path + "'");
  }
}

RawCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)),
                          std::istreambuf_iterator<char>());

  size_t pos = 0;
  auto need = [&](size_t n) {
    if (bytes.size() - pos < n) throw IntegrityError("truncated checkpoint '" + path + "'");
  };
  auto get_u16 = [&] {
    need(2);
    uint16_t v;
    std::memcpy(&v, bytes.data() + pos, 2);
    pos += 2;
    return v;
  };
  auto get_u32 = [&] {
    need(4);
    uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  };
  auto get_u64 = [&] {
    need(8);
    uint64_t v;
    std::memcpy(&v, bytes.data() + pos, 8);
    pos += 8;
    return v;
  };

  need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw IntegrityError("'" + path + "' is not a seqforge checkpoint (bad magic)");
  pos += 4;
  const uint32_t version = get_u32();
  if (version > static_cast<uint32_t>(kCheckpointVersion))
    throw ConfigError("checkpoint version " + std::to_string(version) +
                      " is newer than this engine (" +
                      std::to_string(kCheckpointVersion) + ")");
  if (version < 1) throw IntegrityError("checkpoint version 0 is invalid");
  const uint32_t nsec = get_u32();
  if (nsec > 64) throw IntegrityError("implausible section count in '" + path + "'");

  RawCheckpoint raw;
  raw.version = static_cast<int>(version);
  bool have_meta = false, have_params = false;
  for (uint32_t i = 0; i < nsec; ++i) {
    const uint16_t nlen = get_u16();
    need(nlen);
    const std::string name = bytes.substr(pos, nlen);
    pos += nlen;
    const uint64_t off = get_u64();
    const uint64_t size = get_u64();
    const uint64_t sum = get_u64();
    if (off > bytes.size() || size > bytes.size() - off)
      throw IntegrityError("truncated checkpoint '" + path + "'");
    if (checksum_bytes(bytes.data() + off, size) != sum)
      throw IntegrityError("checksum mismatch in section '" + name + "' of '" + path + "'");
    const char* payload = bytes.data() + off;

    if (name == "meta") {
      have_meta = true;
      size_t line = 0;
      const std::string text(payload, size);
      while (line < text.size()) {
        size_t nl = text.find('\n', line);
        if (nl == std::string::npos) nl = text.size();
        const std::string row = text.substr(line, nl - line);
        line = nl + 1;
        if (row.empty()) continue;
        const size_t sep = row.find(" = ");
        if (sep == std::string::npos || sep == 0)
          throw IntegrityError("malformed meta line in '" + path + "': " + row);
        raw.meta[row.substr(0, sep)] = row.substr(sep + 3);
      }
    } else if (name == "params" || name == "opt") {
      if (size % sizeof(float) != 0)
        throw IntegrityError("section '" + name + "' is not whole floats in '" + path + "'");
      std::vector<float>& dst = name == "params" ? raw.params : raw.opt;
      dst.resize(size / sizeof(float));
      std::memcpy(dst.data(), payload, size);
      if (name == "params") have_params = true;
    }
    // unknown sections are skipped once their checksum holds
  }
  if (!have_meta || !have_params)
    throw IntegrityError("checkpoint '" + path + "' lacks a required section");
  return raw;
}

std::unique_ptr<Trainer> load_checkpoint(const std::string& path, LoadReport* report,
                                         const Registry& reg) {
  RawCheckpoint raw = read_checkpoint(path);
  if (report) {
    report->file_version = raw.version;
    report->upgrades_applied = 0;
  }
  KvTree tree = std::move(raw.meta);
  if (raw.version < kCheckpointVersion) {
    tree = upgrade_tree(std::move(tree), raw.version);
    if (report) report->upgrades_applied = kCheckpointVersion - raw.version;
  }

  // replay the user-provenance keys onto the current engine's resolution
  std::vector<std::pair<std::string, std::string>> user;
  for (const auto& [k, v] : tree) {
    if (k.rfind("config.", 0) != 0) continue;
    const std::string name = k.substr(7);
    auto o = tree.find("origin." + name);
    if (o != tree.end() && o->second == "user") user.emplace_back(name, v);
  }
  Config cfg = reg.resolve_architecture(tree_at(tree, "config.arch"), user);
  auto tr = std::make_unique<Trainer>(cfg, reg);

  auto dst = tr->model().params();
  if (parse_i64(tree, "model.params") != static_cast<int64_t>(dst.size()) ||
      raw.params.size() != dst.size())
    throw IntegrityError("parameter payload does not match the model (" +
                         std::to_string(raw.params.size()) + " vs " +
                         std::to_string(dst.size()) + " floats)");
  const auto& man = tr->model().manifest();
  if (parse_i64(tree, "model.tensors") != static_cast<int64_t>(man.size()))
    throw IntegrityError("parameter manifest does not match the model");
  char key[32];
  for (size_t i = 0; i < man.size(); ++i) {
    std::snprintf(key, sizeof key, "param.%04zu", i);
    if (tree_at(tree, key) != manifest_line(man[i]))
      throw IntegrityError("manifest mismatch at " + man[i].name);
  }
  std::memcpy(dst.data(), raw.params.data(), dst.size() * sizeof(float));

  auto blobs = tr->optimizer().state_blobs();
  if (parse_i64(tree, "opt.blobs") != static_cast<int64_t>(blobs.size()))
    throw IntegrityError("optimizer state layout does not match");
  for (size_t i = 0; i < blobs.size(); ++i) {
    std::snprintf(key, sizeof key, "opt.blob.%02zu", i);
    const std::string& line = tree_at(tree, key);
    const std::string expect_prefix = blobs[i].first + " ";
    if (line.rfind(expect_prefix, 0) != 0)
      throw IntegrityError("optimizer blob mismatch: expected '" + blobs[i].first +
                           "', found '" + line + "'");
    int64_t off = 0, numel = 0;
    if (std::sscanf(line.c_str() + expect_prefix.size(), "%ld %ld", &off, &numel) != 2 ||
        off < 0 || numel != static_cast<int64_t>(blobs[i].second.size()) ||
        off + numel > static_cast<int64_t>(raw.opt.size()))
      throw IntegrityError("optimizer blob '" + blobs[i].first + "' out of range");
    std::memcpy(blobs[i].second.data(), raw.opt.data() + off,
                static_cast<size_t>(numel) * sizeof(float));
  }
  tr->optimizer().load_state_blobs(blobs);
  tr->optimizer().set_step_count(parse_i64(tree, "opt.step_count"));

  if (tr->fp16()) {
    if (parse_i64(tree, "loss_scaler.window") != tr->scaler().window())
      throw IntegrityError("loss scaler window does not match the config");
    tr->restore_scaler(parse_real(tree, "loss_scaler.scale"),
                       parse_i64(tree, "loss_scaler.successes"));
  }

  tr->restore_progress(parse_i64(tree, "progress.step"),
                       static_cast<int>(parse_i64(tree, "progress.epoch")),
                       static_cast<int>(parse_i64(tree, "progress.cursor")));
  tr->rebroadcast();
  return tr;
}

}  // namespace seqforge
