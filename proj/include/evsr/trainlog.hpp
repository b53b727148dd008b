#pragma once

#include <vector>

namespace evsr {

/// One record of a training-log stream shared by both branches.
struct TrainRecord {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

using TrainLog = std::vector<TrainRecord>;

}  // namespace evsr
