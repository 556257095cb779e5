#pragma once

#include <filesystem>
#include <iosfwd>

#include "ltlab/matrix.hpp"

namespace ltlab {

/// Binary matrix record: magic "LTMX", u32 rows, u32 cols, then
/// rows*cols f64 values row-major. All fields little-endian.
void write_matrix(std::ostream& out, const Matrix& m);

/// Reads one matrix record. Throws FormatError with the byte offset on bad
/// magic or truncated payload. `base_offset` shifts reported offsets when
/// the record is embedded in a larger file.
Matrix read_matrix(std::istream& in, std::size_t base_offset = 0);

void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);

}  // namespace ltlab
