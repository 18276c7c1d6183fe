//! Function names the validator accepts.

pub const AGGREGATES: &[&str] = &[
    "any",
    "arg_max",
    "arg_min",
    "avg",
    "avgif",
    "count",
    "count_distinct",
    "countif",
    "dcount",
    "dcountif",
    "make_bag",
    "make_list",
    "make_list_if",
    "make_set",
    "make_set_if",
    "max",
    "maxif",
    "min",
    "minif",
    "percentile",
    "percentiles",
    "stdev",
    "sum",
    "sumif",
    "take_any",
    "variance",
];

pub const SCALARS: &[&str] = &[
    "abs",
    "ago",
    "around",
    "array_concat",
    "array_index_of",
    "array_length",
    "array_slice",
    "array_sort_asc",
    "array_sort_desc",
    "bag_keys",
    "bag_pack",
    "base64_decode_tostring",
    "base64_encode_tostring",
    "bin",
    "ceiling",
    "coalesce",
    "column_ifexists",
    "countof",
    "datetime_add",
    "datetime_diff",
    "datetime_part",
    "dayofmonth",
    "dayofweek",
    "dayofyear",
    "endofday",
    "endofmonth",
    "endofweek",
    "exp",
    "extract",
    "extract_all",
    "floor",
    "format_datetime",
    "format_timespan",
    "getmonth",
    "gettype",
    "getyear",
    "hash",
    "hash_sha256",
    "hourofday",
    "iff",
    "iif",
    "indexof",
    "ipv4_is_in_range",
    "ipv4_is_private",
    "isempty",
    "isnan",
    "isnotempty",
    "isnotnull",
    "isnull",
    "log",
    "log10",
    "materialize",
    "max_of",
    "min_of",
    "monthofyear",
    "next",
    "not",
    "now",
    "pack",
    "pack_all",
    "pack_array",
    "parse_command_line",
    "parse_json",
    "parse_path",
    "parse_url",
    "pow",
    "prev",
    "range",
    "replace_regex",
    "replace_string",
    "reverse",
    "round",
    "row_number",
    "set_difference",
    "set_has_element",
    "set_intersect",
    "set_union",
    "split",
    "sqrt",
    "startofday",
    "startofmonth",
    "startofweek",
    "startofyear",
    "strcat",
    "strcat_array",
    "strcat_delim",
    "strlen",
    "substring",
    "tobool",
    "todatetime",
    "todecimal",
    "todouble",
    "todynamic",
    "toguid",
    "tohex",
    "toint",
    "tolong",
    "tolower",
    "toreal",
    "toscalar",
    "tostring",
    "totimespan",
    "toupper",
    "trim",
    "trim_end",
    "trim_start",
    "unixtime_milliseconds_todatetime",
    "unixtime_seconds_todatetime",
    "url_decode",
    "url_encode",
    "week_of_year",
];

pub fn is_aggregate(name: &str) -> bool {
    AGGREGATES.binary_search(&name).is_ok()
}

pub fn is_scalar(name: &str) -> bool {
    SCALARS.binary_search(&name).is_ok()
}

pub fn is_known(name: &str) -> bool {
    is_aggregate(name) || is_scalar(name)
}
