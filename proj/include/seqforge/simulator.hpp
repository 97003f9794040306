#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace seqforge {

// What the timeline models, in one paragraph: every replica computes its
// sub-batch as one block whose gradient buckets complete at equally
// spaced points inside it (bucket j of nb is ready at start + D*(j+1)/nb),
// and a single shared channel reduces buckets in order, each one starting
// once it is ready on every replica and the channel is free.
enum class SyncMode {
  SerialSync,    // barrier after each sub-batch, then all buckets back-to-back
  Overlap,       // per-sub-batch sync, buckets reduced as they complete
  OverlapAccum,  // A sub-batches back-to-back, only the final one reduced
};

SyncMode sync_mode_from_name(const std::string& name);
const char* sync_mode_name(SyncMode m);

struct SimScenario {
  int workers = 0;
  int accum = 0;
  SyncMode mode = SyncMode::SerialSync;
  std::vector<std::vector<double>> compute;  // [replica][sub-batch] durations
  std::vector<double> comm;                  // per-bucket durations, reduction order
};

// Text form, one directive per line ('#' starts a comment):
//   workers W
//   accum A
//   mode serial_sync|overlap|overlap_accum
//   compute <replica> <A durations>
//   buckets <durations...>
SimScenario parse_scenario(std::istream& in);
SimScenario load_scenario(const std::string& path);

struct SimSpan {
  double begin = 0.0;
  double end = 0.0;
};

struct TimelineReport {
  double makespan = 0.0;
  std::vector<double> idle;   // per replica: time spent waiting on peers
  double exposed_comm = 0.0;  // reduction time not hidden under compute
  double total_compute = 0.0;
  std::vector<std::vector<SimSpan>> compute_spans;  // per replica
  std::vector<SimSpan> comm_spans;                  // shared channel
};

TimelineReport simulate_timeline(const SimScenario& sc);
std::string format_report(const TimelineReport& r);

}  // namespace seqforge
