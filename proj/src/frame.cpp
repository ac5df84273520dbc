#include "msmpam/frame.hpp"

#include <algorithm>

#include "msmpam/error.hpp"

namespace msmpam {

Column Column::categorical(std::vector<int> codes, std::vector<std::string> levels) {
    Column c;
    c.kind = Kind::Categorical;
    c.codes = std::move(codes);
    c.levels = std::move(levels);
    auto it = std::find(c.levels.begin(), c.levels.end(), "none");
    c.none_level = (it == c.levels.end()) ? -1 : static_cast<int>(it - c.levels.begin());
    return c;
}

const Column& Frame::col(const std::string& name) const {
    auto it = cols_.find(name);
    if (it == cols_.end()) fail_data("MissingColumn", "column '" + name + "' not in frame");
    return it->second;
}

Column& Frame::col(const std::string& name) {
    auto it = cols_.find(name);
    if (it == cols_.end()) fail_data("MissingColumn", "column '" + name + "' not in frame");
    return it->second;
}

const std::vector<double>& Frame::num(const std::string& name) const {
    const Column& c = col(name);
    if (c.kind != Column::Kind::Numeric) fail_data("SchemaMismatch", "column '" + name + "' is not numeric");
    return c.values;
}

const std::vector<int>& Frame::cat(const std::string& name) const {
    const Column& c = col(name);
    if (c.kind != Column::Kind::Categorical) fail_data("SchemaMismatch", "column '" + name + "' is not categorical");
    return c.codes;
}

void Frame::add(const std::string& name, Column column) {
    if (cols_.count(name)) fail_usage("DuplicateColumn", "column '" + name + "' already present");
    if (n_rows_ == 0 && order_.empty())
        n_rows_ = column.size();
    else if (column.size() != n_rows_)
        fail_usage("BadArgument", "column '" + name + "' has wrong length");
    order_.push_back(name);
    cols_.emplace(name, std::move(column));
}

}  // namespace msmpam
