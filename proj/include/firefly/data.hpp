#pragma once

#include <cstddef>
#include <vector>

namespace firefly {

// Column-major batch: columns[d][row].
struct Batch {
  std::vector<std::vector<double>> columns;

  std::size_t dim() const { return columns.size(); }
  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
};

enum class TaskKind { Regression, Classification };

struct Dataset {
  TaskKind kind = TaskKind::Regression;
  Batch inputs;
  Batch targets;            // regression only
  std::vector<int> labels;  // classification only
  int num_classes = 0;

  std::size_t size() const { return inputs.rows(); }
};

}  // namespace firefly
