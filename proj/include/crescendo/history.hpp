#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "crescendo/trainer.hpp"

namespace crescendo {

/// Header row plus string cells. Cells never contain commas.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

/// "{1 3}": the path-set label used in CSV cells and column names.
std::string csv_path_label(const PathSet& paths);

/// epoch,path,train_loss,train_error,learning_rate,eval_error_{..}... one row per epoch.
/// Wall-clock time is kept out so the file is reproducible.
CsvTable history_table(const TrainHistory& history);
/// epoch,seconds
CsvTable timing_table(const TrainHistory& history);

void write_csv(std::ostream& out, const CsvTable& table);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

/// Throws FormatError on ragged rows or an empty file.
CsvTable read_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);

struct LabeledTable {
  std::string label;
  CsvTable table;
};

/// Long format run,epoch,metric,value: one row per input row and non-epoch
/// column. Throws SchemaError naming the first column that differs from
/// the first table's header.
CsvTable merge_curves(const std::vector<LabeledTable>& inputs);

}  // namespace crescendo
