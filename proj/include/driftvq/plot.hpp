#pragma once

#include <iosfwd>
#include <string>

#include "driftvq/harness.hpp"

namespace driftvq {

// Point layers: purple targets, green base
// cloud, blue drifted cloud at the snapshot step, red crosses for codes.
struct SvgStyle {
    std::string target_color = "#8e44ad";
    std::string base_color = "#27ae60";
    std::string current_color = "#2e86de";
    std::string code_color = "#e74c3c";
    double width = 480.0;
    double height = 480.0;
};

// Data-space bounding box shared by every snapshot of a run, so panels are
// visually comparable.
struct PlotFrame {
    double min_x = 0.0, max_x = 1.0;
    double min_y = 0.0, max_y = 1.0;
};

// Covers base, targets, and every snapshot's drifted cloud and codebook.
// Uses the first two coordinates.
PlotFrame run_frame(const TraceLog& log);

void write_snapshot_svg(std::ostream& out, const TraceLog& log, std::size_t step,
                        const PlotFrame& frame, const SvgStyle& style = {});

}  // namespace driftvq
