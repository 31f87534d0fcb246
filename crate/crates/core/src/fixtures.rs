//! Small SQLite databases used by the test suites, benchmarks, and the
//! README walkthrough.
//!
//! The row counts are load-bearing: `singer` has 3 singers and
//! `employee_hire_evaluation` has 5 employees, and the restaurants database
//! stores Los Angeles as `LA`.

use std::path::{Path, PathBuf};

use rusqlite::Connection;

use crate::catalog::{Catalog, CatalogError};

pub const RESTAURANTS_DDL: &str = "
CREATE TABLE geographic(city_name TEXT PRIMARY KEY, county TEXT, region TEXT);
CREATE TABLE restaurant(
    id INTEGER PRIMARY KEY,
    name TEXT,
    food_type TEXT,
    city_name TEXT REFERENCES geographic(city_name),
    location TEXT,
    rating REAL
);
INSERT INTO geographic VALUES
    ('new york', 'new york county', 'east coast'),
    ('los angeles', 'los angeles county', 'southern california'),
    ('san francisco', 'san francisco county', 'bay area');
INSERT INTO restaurant VALUES
    (1, 'Thai Palace', 'thai', 'new york', 'New York', 4.1),
    (2, 'Bangkok Bites', 'thai', 'new york', 'New York', 3.8),
    (3, 'Pasta Roma', 'italian', 'new york', 'New York', 4.5),
    (4, 'Taco Loco', 'mexican', 'los angeles', 'LA', 4.0),
    (5, 'Sunset Grill', 'american', 'los angeles', 'LA', 3.5),
    (6, 'Golden Gate Dim Sum', 'chinese', 'san francisco', 'SF', 4.6),
    (7, 'Siam Garden', 'thai', 'los angeles', 'LA', 4.2);
";

pub const SINGER_DDL: &str = "
CREATE TABLE singer(singer_id INTEGER PRIMARY KEY, name TEXT, country TEXT, age INTEGER);
CREATE TABLE song(song_id INTEGER PRIMARY KEY, singer_id INTEGER REFERENCES singer(singer_id), title TEXT);
INSERT INTO singer VALUES
    (1, 'Joe Sharp', 'Netherlands', 52),
    (2, 'Timbaland', 'United States', 32),
    (3, 'Justin Brown', 'France', 29);
INSERT INTO song VALUES (1, 1, 'Lonely Road'), (2, 2, 'The Way I Are'), (3, 3, 'Paris Nights');
";

pub const EMPLOYEE_DDL: &str = "
CREATE TABLE employee(employee_id INTEGER PRIMARY KEY, name TEXT, age INTEGER, city TEXT);
CREATE TABLE shop(shop_id INTEGER PRIMARY KEY, name TEXT, location TEXT, district TEXT);
CREATE TABLE hiring(
    shop_id INTEGER REFERENCES shop(shop_id),
    employee_id INTEGER PRIMARY KEY REFERENCES employee(employee_id),
    start_from TEXT,
    is_full_time TEXT
);
INSERT INTO employee VALUES
    (1, 'George Chuter', 23, 'Bristol'),
    (2, 'Lee Mears', 29, 'Bath'),
    (3, 'Mark Regan', 43, 'Bristol'),
    (4, 'Jason Hobson', 30, 'Bristol'),
    (5, 'Tim Payne', 29, 'Wasps');
INSERT INTO shop VALUES (1, 'FC Haka', 'Valkeakoski', 'Tehtaan kentta'), (2, 'HJK', 'Helsinki', 'Finnair Stadium');
INSERT INTO hiring VALUES (1, 1, '2009', 'T'), (1, 2, '2003', 'T'), (2, 3, '2011', 'F');
";

pub const CITY_DDL: &str = "
CREATE TABLE city(city_id INTEGER PRIMARY KEY, name TEXT, state TEXT, population INTEGER);
INSERT INTO city VALUES
    (1, 'Seattle', 'Washington', 737015),
    (2, 'Portland', 'Oregon', 652503),
    (3, 'Spokane', 'Washington', 228989);
";

pub const HOSPITAL_DDL: &str = "
CREATE TABLE hospital(hospital_id INTEGER PRIMARY KEY, name TEXT, city TEXT, beds INTEGER);
INSERT INTO hospital VALUES
    (1, 'Harborview Medical Center', 'Seattle', 413),
    (2, 'Swedish First Hill', 'Seattle', 697),
    (3, 'Providence Portland', 'Portland', 483);
";

/// Creates `<dir>/<id>.sqlite` from a DDL/DML script, replacing any
/// existing file.
pub fn write_database(dir: &Path, id: &str, script: &str) -> rusqlite::Result<PathBuf> {
    let path = dir.join(format!("{id}.sqlite"));
    // A stale file would make the CREATE statements fail below.
    let _ = std::fs::remove_file(&path);
    let conn = Connection::open(&path)?;
    conn.execute_batch(script)?;
    Ok(path)
}

fn build(dir: &Path, dbs: &[(&str, &str)]) -> Result<Catalog, CatalogError> {
    let mut catalog = Catalog::new();
    for (id, script) in dbs {
        let path = write_database(dir, id, script).map_err(|e| CatalogError::UnreadableDatabase {
            path: dir.join(format!("{id}.sqlite")),
            reason: e.to_string(),
        })?;
        catalog.register(&path, id)?;
    }
    Ok(catalog)
}

/// restaurants, singer, employee_hire_evaluation, city, hospital.
pub fn standard_catalog(dir: &Path) -> Result<Catalog, CatalogError> {
    build(
        dir,
        &[
            ("restaurants", RESTAURANTS_DDL),
            ("singer", SINGER_DDL),
            ("employee_hire_evaluation", EMPLOYEE_DDL),
            ("city", CITY_DDL),
            ("hospital", HOSPITAL_DDL),
        ],
    )
}

pub fn city_hospital_catalog(dir: &Path) -> Result<Catalog, CatalogError> {
    build(dir, &[("city", CITY_DDL), ("hospital", HOSPITAL_DDL)])
}

const TOPICS: &[&str] = &[
    "airport", "library", "museum", "stadium", "school", "bakery", "farm", "bank", "theater",
    "orchestra", "railway", "harbor", "zoo", "gym", "pharmacy", "vineyard", "observatory",
    "bookstore", "garage", "hotel", "festival", "brewery", "ferry", "cinema",
];

/// `n` small databases named `db00`, `db01`, ... each with one topical table.
pub fn synthetic_catalog(dir: &Path, n: usize) -> Result<Catalog, CatalogError> {
    let scripts: Vec<(String, String)> = (0..n)
        .map(|i| {
            let topic = TOPICS[i % TOPICS.len()];
            let script = format!(
                "CREATE TABLE {topic}({topic}_id INTEGER PRIMARY KEY, name TEXT, city TEXT, capacity INTEGER);
                 INSERT INTO {topic} VALUES (1, '{topic} one', 'Springfield', {a}), (2, '{topic} two', 'Shelbyville', {b});",
                a = 10 + i,
                b = 20 + i,
            );
            (format!("db{i:02}"), script)
        })
        .collect();
    let refs: Vec<(&str, &str)> = scripts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    build(dir, &refs)
}
