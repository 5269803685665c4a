#include "crescendo/history.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "crescendo/config.hpp"

namespace crescendo {

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw SchemaError(name, "no such column");
}

std::string csv_path_label(const PathSet& paths) {
  std::string s = "{";
  for (std::size_t i = 0; i < paths.branches().size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(paths.branches()[i]);
  }
  return s + "}";
}

CsvTable history_table(const TrainHistory& history) {
  CsvTable t;
  t.header = {"epoch", "path", "train_loss", "train_error", "learning_rate"};
  for (const PathSet& p : history.tracked) t.header.push_back("eval_error_" + csv_path_label(p));
  for (const EpochRecord& r : history.epochs) {
    std::vector<std::string> row = {std::to_string(r.epoch), std::to_string(r.path), format_double(r.train_loss),
                                    format_double(r.train_error), format_double(r.learning_rate)};
    for (std::size_t i = 0; i < history.tracked.size(); ++i) {
      row.push_back(i < r.eval_error.size() ? format_double(r.eval_error[i]) : std::string("nan"));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable timing_table(const TrainHistory& history) {
  CsvTable t;
  t.header = {"epoch", "seconds"};
  for (const EpochRecord& r : history.epochs) t.rows.push_back({std::to_string(r.epoch), format_double(r.seconds)});
  return t;
}

void write_csv(std::ostream& out, const CsvTable& table) {
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(table.header);
  for (const auto& row : table.rows) line(row);
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string(), 0);
  write_csv(out, table);
}

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  std::uint64_t offset = 0;
  bool first = true;
  while (std::getline(in, line)) {
    const std::uint64_t line_at = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != table.header.size()) {
        throw FormatError("row has " + std::to_string(cells.size()) + " cells, header has " +
                              std::to_string(table.header.size()),
                          line_at);
      }
      table.rows.push_back(std::move(cells));
    }
  }
  if (first) throw FormatError("empty CSV", 0);
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return read_csv(in);
}

CsvTable merge_curves(const std::vector<LabeledTable>& inputs) {
  if (inputs.empty()) throw UsageError("no curves to merge");
  const auto& reference = inputs.front().table.header;
  if (reference.empty() || reference.front() != "epoch") {
    throw SchemaError(reference.empty() ? std::string("epoch") : reference.front(), "first column must be 'epoch'");
  }
  for (const auto& input : inputs) {
    const auto& header = input.table.header;
    for (std::size_t i = 0; i < std::max(header.size(), reference.size()); ++i) {
      if (i >= header.size()) throw SchemaError(reference[i], "missing in " + input.label);
      if (i >= reference.size()) throw SchemaError(header[i], "unexpected in " + input.label);
      if (header[i] != reference[i]) throw SchemaError(reference[i], input.label + " has '" + header[i] + "' instead");
    }
  }
  CsvTable out;
  out.header = {"run", "epoch", "metric", "value"};
  for (const auto& input : inputs) {
    for (const auto& row : input.table.rows) {
      for (std::size_t c = 1; c < reference.size(); ++c) out.rows.push_back({input.label, row[0], reference[c], row[c]});
    }
  }
  return out;
}

}  // namespace crescendo
