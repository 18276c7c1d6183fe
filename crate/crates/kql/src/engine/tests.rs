use super::*;

fn db() -> Database {
    load_database([
        (
            "t.tbl",
            "T\nColName:string,X:long,Ts:datetime\n\"a\",1,2024-01-01\n\"a\",2,2024-01-02\n\"b\",3,2024-01-03\n",
        ),
        (
            "u.tbl",
            "U\nColName:string,Y:long\n\"a\",10\n\"c\",30\n,40\n",
        ),
    ])
    .unwrap()
}

fn run(q: &str) -> ResultTable {
    execute_text(q, &db()).unwrap_or_else(|e| panic!("{q}: {e}"))
}

fn longs(r: &ResultTable, col: usize) -> Vec<i64> {
    r.rows
        .iter()
        .map(|row| match row[col] {
            Value::Long(n) => n,
            ref v => panic!("{v:?}"),
        })
        .collect()
}

#[test]
fn take_caps_rows() {
    assert_eq!(run("T | take 100").rows.len(), 3);
    assert_eq!(run("T | take 2").rows.len(), 2);
}

#[test]
fn summarize_count_by_key() {
    let r = run("T | summarize Count = count() by ColName");
    assert_eq!(r.columns, vec!["ColName", "Count"]);
    assert_eq!(
        r.rows,
        vec![
            vec![Value::String("a".into()), Value::Long(2)],
            vec![Value::String("b".into()), Value::Long(1)],
        ]
    );
}

#[test]
fn range_sum() {
    let r = run("range x from 1 to 10 step 1 | summarize sum(x)");
    assert_eq!(r.columns, vec!["sum_x"]);
    assert_eq!(r.rows, vec![vec![Value::Long(55)]]);
}

#[test]
fn project_columns() {
    let r = run("T | project ColName, X");
    assert_eq!(r.column_set(), ["ColName", "X"].iter().map(|s| s.to_string()).collect());
}

#[test]
fn where_and_extend() {
    let r = run("T | where X >= 2 | extend Y = X * 2 | project Y");
    assert_eq!(longs(&r, 0), vec![4, 6]);
}

#[test]
fn order_defaults_to_descending() {
    let r = run("T | order by X | project X");
    assert_eq!(longs(&r, 0), vec![3, 2, 1]);
    let r = run("T | sort by X asc | project X");
    assert_eq!(longs(&r, 0), vec![1, 2, 3]);
}

#[test]
fn joins() {
    let r = run("T | join kind=inner (U) on ColName");
    assert_eq!(r.columns, vec!["ColName", "X", "Ts", "ColName1", "Y"]);
    assert_eq!(r.rows.len(), 2);
    let r = run("T | join (U) on ColName");
    assert_eq!(r.rows.len(), 1, "innerunique keeps one left row per key");
    let r = run("T | join kind=leftouter (U) on ColName");
    assert_eq!(r.rows.len(), 3);
    let r = run("T | join kind=fullouter (U) on ColName");
    assert_eq!(r.rows.len(), 5, "null key never matches");
    let r = run("T | join kind=leftanti (U) on ColName");
    assert_eq!(r.rows.len(), 1);
    let r = run("T | join kind=inner (U) on $left.ColName == $right.ColName");
    assert_eq!(r.rows.len(), 2);
}

#[test]
fn null_comparisons_are_false() {
    let r = run("U | where ColName != \"a\" | project Y");
    assert_eq!(longs(&r, 0), vec![30]);
}

#[test]
fn string_vs_number_is_type_error() {
    assert!(matches!(
        execute_text("T | where ColName == 1", &db()),
        Err(ExecError::Type(_))
    ));
}

#[test]
fn unknowns_are_errors() {
    assert!(matches!(execute_text("Nope | take 1", &db()), Err(ExecError::UnknownTable(_))));
    assert!(matches!(execute_text("T | project Nope", &db()), Err(ExecError::UnknownColumn(_))));
}

#[test]
fn arg_max_with_star() {
    let r = run("T | summarize arg_max(X, *) by ColName");
    assert_eq!(r.columns, vec!["ColName", "X", "Ts"]);
    assert_eq!(longs(&r, 1), vec![2, 3]);
}

#[test]
fn lets_and_aliases() {
    let r = run("let n = 2; let t = T; t | where X >= n | count");
    assert_eq!(r.rows, vec![vec![Value::Long(2)]]);
    let r = run("let s = T | where X == 1; s | union U | count");
    assert_eq!(r.rows, vec![vec![Value::Long(4)]]);
}

#[test]
fn mv_expand_and_datetime() {
    let r = run("T | take 1 | extend A = dynamic([1, 2, 3]) | mv-expand A to typeof(long) | project A");
    assert_eq!(longs(&r, 0), vec![1, 2, 3]);
    let r = run("T | where Ts > datetime(2024-01-01) and Ts <= ago(100d) | count");
    assert_eq!(r.rows, vec![vec![Value::Long(2)]]);
    let r = run("T | summarize count() by bin(Ts, 2d) | project Ts");
    assert_eq!(r.rows.len(), 2);
}

#[test]
fn in_and_has() {
    let r = run("T | where ColName in (\"b\", \"z\") | count");
    assert_eq!(r.rows, vec![vec![Value::Long(1)]]);
    let r = run("T | where ColName in ((U | project ColName)) | count");
    assert_eq!(r.rows, vec![vec![Value::Long(2)]]);
}

#[test]
fn signatures_ignore_column_order() {
    let a = run("T | project ColName, X");
    let b = run("T | project X, ColName");
    assert_eq!(a.row_signatures(), b.row_signatures());
    assert_eq!(a.row_signatures().len(), 3);
}

#[test]
fn row_limit_enforced() {
    let opts = ExecOptions {
        max_rows: 10,
        ..ExecOptions::default()
    };
    let q = crate::parser::parse("range x from 1 to 100 step 1").query.unwrap();
    assert!(matches!(execute_with(&q, &db(), &opts), Err(ExecError::TooManyRows(10))));
}

#[test]
fn deterministic() {
    let q = "T | join kind=fullouter (U) on ColName | summarize make_set(Y), dcount(X) by ColName";
    assert_eq!(run(q), run(q));
}
