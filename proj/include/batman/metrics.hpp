#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "batman/label_map.hpp"

namespace batman {

/// Intersection over union of the pixels labelled `id`; 1 when both are empty.
double region_j(const LabelMap& pred, const LabelMap& gt, int id);

/// Pixels of object `id` that have a 4-neighbour outside the object. The image
/// border does not count as outside.
std::vector<std::uint8_t> boundary_map(const LabelMap& m, int id);

/// Boundary F-measure: precision/recall of boundary pixels matched within a
/// Chebyshev distance of `tolerance` (dilation matching).
double boundary_f(const LabelMap& pred, const LabelMap& gt, int id, int tolerance);

/// max(1, round(0.008 * image diagonal)).
int default_boundary_tolerance(std::size_t height, std::size_t width);

struct FrameScore {
  std::string sequence;
  std::size_t frame = 0;
  int object = 0;
  double j = 0.0;
  double f = 0.0;
};

struct JFSummary {
  double j = 0.0;
  double f = 0.0;
  double jf = 0.0;
  std::size_t frames = 0;
  std::size_t entries = 0;
};

/// Mean over objects within each (sequence, frame), then over frames.
JFSummary jf_report(const std::vector<FrameScore>& scores);

/// Scores frames 1..T-1 for every object id present in the first ground-truth mask.
std::vector<FrameScore> score_sequence(const std::string& name, const std::vector<LabelMap>& pred,
                                       const std::vector<LabelMap>& gt, int tolerance = -1);

/// Header "sequence,frame,object,J,F".
void write_scores_csv(std::ostream& out, const std::vector<FrameScore>& scores);
nlohmann::json summary_json(const JFSummary& s);
std::string summary_line(const JFSummary& s);

}  // namespace batman
