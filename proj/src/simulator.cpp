#include "seqforge/simulator.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "seqforge/common.hpp"

namespace seqforge {

SyncMode sync_mode_from_name(const std::string& name) {
  if (name == "serial_sync") return SyncMode::SerialSync;
  if (name == "overlap") return SyncMode::Overlap;
  if (name == "overlap_accum") return SyncMode::OverlapAccum;
  throw ConfigError("scenario: unknown mode '" + name + "'");
}

const char* sync_mode_name(SyncMode m) {
  switch (m) {
    case SyncMode::SerialSync: return "serial_sync";
    case SyncMode::Overlap: return "overlap";
    case SyncMode::OverlapAccum: return "overlap_accum";
  }
  return "?";
}

namespace {

void validate(const SimScenario& sc) {
  if (sc.workers < 1 || sc.accum < 1)
    throw ConfigError("scenario: workers and accum must be at least 1");
  if (static_cast<int>(sc.compute.size()) != sc.workers)
    throw ConfigError("scenario: need one compute row per replica");
  for (const auto& row : sc.compute) {
    if (static_cast<int>(row.size()) != sc.accum)
      throw ConfigError("scenario: each compute row needs accum durations");
    for (double d : row)
      if (!(d > 0.0)) throw ConfigError("scenario: compute durations must be positive");
  }
  if (sc.comm.empty()) throw ConfigError("scenario: at least one bucket required");
  for (double c : sc.comm)
    if (!(c > 0.0)) throw ConfigError("scenario: bucket durations must be positive");
}

void expect_end(std::istringstream& ls, const std::string& where) {
  std::string extra;
  if (ls >> extra) throw ConfigError("scenario: trailing tokens" + where);
}

}  // namespace

SimScenario parse_scenario(std::istream& in) {
  SimScenario sc;
  bool have_w = false, have_a = false, have_mode = false, have_comm = false;
  std::vector<bool> have_row;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    const std::string where = " (line " + std::to_string(lineno) + ")";
    if (key == "workers" || key == "accum") {
      int v = 0;
      if (!(ls >> v) || v < 1)
        throw ConfigError("scenario: bad " + key + where);
      expect_end(ls, where);
      if (key == "workers") {
        sc.workers = v;
        have_w = true;
        sc.compute.assign(static_cast<size_t>(v), {});
        have_row.assign(static_cast<size_t>(v), false);
      } else {
        sc.accum = v;
        have_a = true;
      }
    } else if (key == "mode") {
      std::string name;
      if (!(ls >> name)) throw ConfigError("scenario: missing mode name" + where);
      sc.mode = sync_mode_from_name(name);
      have_mode = true;
      expect_end(ls, where);
    } else if (key == "compute") {
      if (!have_w || !have_a)
        throw ConfigError("scenario: compute lines must follow workers and accum" + where);
      int w = -1;
      if (!(ls >> w) || w < 0 || w >= sc.workers)
        throw ConfigError("scenario: compute replica index out of range" + where);
      if (have_row[static_cast<size_t>(w)])
        throw ConfigError("scenario: duplicate compute row for replica " +
                          std::to_string(w) + where);
      std::vector<double> row;
      double d = 0;
      while (ls >> d) row.push_back(d);
      if (static_cast<int>(row.size()) != sc.accum)
        throw ConfigError("scenario: compute row needs exactly accum durations" + where);
      sc.compute[static_cast<size_t>(w)] = std::move(row);
      have_row[static_cast<size_t>(w)] = true;
    } else if (key == "buckets") {
      double d = 0;
      while (ls >> d) sc.comm.push_back(d);
      have_comm = true;
    } else {
      throw ConfigError("scenario: unknown directive '" + key + "'" + where);
    }
    if (!ls.eof() && ls.fail())
      throw ConfigError("scenario: trailing garbage" + where);
  }
  if (!have_w || !have_a || !have_mode || !have_comm)
    throw ConfigError("scenario: workers, accum, mode and buckets are all required");
  for (int w = 0; w < sc.workers; ++w)
    if (!have_row[static_cast<size_t>(w)])
      throw ConfigError("scenario: missing compute row for replica " + std::to_string(w));
  validate(sc);
  return sc;
}

SimScenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file: " + path);
  return parse_scenario(in);
}

TimelineReport simulate_timeline(const SimScenario& sc) {
  validate(sc);
  const int W = sc.workers, A = sc.accum;
  const int nb = static_cast<int>(sc.comm.size());
  TimelineReport r;
  r.idle.assign(static_cast<size_t>(W), 0.0);
  r.compute_spans.resize(static_cast<size_t>(W));
  for (const auto& row : sc.compute)
    for (double d : row) r.total_compute += d;

  if (sc.mode == SyncMode::OverlapAccum) {
    // each replica runs its A sub-batches back-to-back; only the final
    // sub-batch's buckets hit the channel
    std::vector<double> last_start(static_cast<size_t>(W), 0.0);
    std::vector<double> finish(static_cast<size_t>(W), 0.0);
    double maxf = 0.0;
    for (int w = 0; w < W; ++w) {
      double t = 0.0;
      for (int a = 0; a < A; ++a) {
        if (a == A - 1) last_start[static_cast<size_t>(w)] = t;
        r.compute_spans[static_cast<size_t>(w)].push_back(
            {t, t + sc.compute[static_cast<size_t>(w)][static_cast<size_t>(a)]});
        t += sc.compute[static_cast<size_t>(w)][static_cast<size_t>(a)];
      }
      finish[static_cast<size_t>(w)] = t;
      maxf = std::max(maxf, t);
    }
    double chan = 0.0;
    for (int j = 0; j < nb; ++j) {
      double ready = 0.0;
      for (int w = 0; w < W; ++w)
        ready = std::max(ready, last_start[static_cast<size_t>(w)] +
                                    sc.compute[static_cast<size_t>(w)][static_cast<size_t>(A - 1)] *
                                        (j + 1) / nb);
      const double s = std::max(ready, chan);
      r.comm_spans.push_back({s, s + sc.comm[static_cast<size_t>(j)]});
      chan = s + sc.comm[static_cast<size_t>(j)];
    }
    for (int w = 0; w < W; ++w) r.idle[static_cast<size_t>(w)] = maxf - finish[static_cast<size_t>(w)];
    r.exposed_comm = chan - maxf;
    r.makespan = chan;
    return r;
  }

  // serial_sync and overlap: one sync round per sub-batch index
  double t = 0.0;
  for (int a = 0; a < A; ++a) {
    std::vector<double> finish(static_cast<size_t>(W), 0.0);
    double maxf = 0.0;
    for (int w = 0; w < W; ++w) {
      const double d = sc.compute[static_cast<size_t>(w)][static_cast<size_t>(a)];
      finish[static_cast<size_t>(w)] = t + d;
      r.compute_spans[static_cast<size_t>(w)].push_back({t, t + d});
      maxf = std::max(maxf, t + d);
    }
    double end = maxf;
    if (sc.mode == SyncMode::SerialSync) {
      // everybody reaches the barrier, then the buckets go out one by one
      for (int j = 0; j < nb; ++j) {
        r.comm_spans.push_back({end, end + sc.comm[static_cast<size_t>(j)]});
        end += sc.comm[static_cast<size_t>(j)];
      }
    } else {
      double chan = t;
      for (int j = 0; j < nb; ++j) {
        double ready = 0.0;
        for (int w = 0; w < W; ++w)
          ready = std::max(ready, t + sc.compute[static_cast<size_t>(w)][static_cast<size_t>(a)] *
                                          (j + 1) / nb);
        const double s = std::max(ready, chan);
        r.comm_spans.push_back({s, s + sc.comm[static_cast<size_t>(j)]});
        chan = s + sc.comm[static_cast<size_t>(j)];
      }
      end = chan;
    }
    for (int w = 0; w < W; ++w) r.idle[static_cast<size_t>(w)] += maxf - finish[static_cast<size_t>(w)];
    r.exposed_comm += end - maxf;
    t = end;
  }
  r.makespan = t;
  return r;
}

namespace {
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string format_report(const TimelineReport& r) {
  std::string out;
  out += "makespan " + fmt(r.makespan) + "\n";
  for (size_t w = 0; w < r.idle.size(); ++w)
    out += "idle " + std::to_string(w) + " " + fmt(r.idle[w]) + "\n";
  out += "exposed_comm " + fmt(r.exposed_comm) + "\n";
  out += "total_compute " + fmt(r.total_compute) + "\n";
  return out;
}

}  // namespace seqforge
