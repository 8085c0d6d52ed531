//! Name-keyed registries for interchangeable strategies.
//!
//! Each family (predictors, training objectives, latency averaging) exposes a
//! trait; implementations register a constructor under a stable name and are
//! selected at runtime from a spec string such as `recurrent` or `limited:2`.

use std::fmt;

use crate::error::{Error, Result};

/// A parsed `name[:arg]` selector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StrategySpec {
    pub name: String,
    pub arg: Option<String>,
}

impl StrategySpec {
    pub fn parse(s: &str) -> Self {
        let s = s.trim();
        match s.split_once(':') {
            Some((name, arg)) => StrategySpec {
                name: name.trim().to_string(),
                arg: Some(arg.trim().to_string()),
            },
            None => StrategySpec {
                name: s.to_string(),
                arg: None,
            },
        }
    }

    pub fn arg_usize(&self, default: usize) -> Result<usize> {
        match &self.arg {
            None => Ok(default),
            Some(a) => a.parse().map_err(|_| {
                Error::InvalidArgument(format!("'{}' expects an integer argument, got '{a}'", self.name))
            }),
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arg {
            Some(a) => write!(f, "{}:{}", self.name, a),
            None => f.write_str(&self.name),
        }
    }
}

type Factory<T> = Box<dyn Fn(&StrategySpec) -> Result<Box<T>> + Send + Sync>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, Factory<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn register<F>(&mut self, name: &'static str, factory: F) -> &mut Self
    where
        F: Fn(&StrategySpec) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, Box::new(factory)));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn build(&self, spec: &StrategySpec) -> Result<Box<T>> {
        let (_, factory) = self
            .entries
            .iter()
            .find(|(n, _)| *n == spec.name)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: spec.name.clone(),
                known: self.names().join(", "),
            })?;
        factory(spec)
    }

    pub fn build_str(&self, spec: &str) -> Result<Box<T>> {
        self.build(&StrategySpec::parse(spec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }

    struct Hello(usize);

    impl Greeter for Hello {
        fn greet(&self) -> String {
            "hello".repeat(self.0)
        }
    }

    #[test]
    fn builds_by_name_with_argument() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register("hello", |s| Ok(Box::new(Hello(s.arg_usize(1)?))));
        assert_eq!(reg.build_str("hello").unwrap().greet(), "hello");
        assert_eq!(reg.build_str("hello:2").unwrap().greet(), "hellohello");
        let err = reg.build_str("bye").err().unwrap();
        assert!(matches!(err, Error::UnknownStrategy { .. }));
        assert!(reg.build_str("hello:x").is_err());
    }

    #[test]
    fn spec_round_trips_through_display() {
        let s = StrategySpec::parse(" limited : 3 ");
        assert_eq!(s.name, "limited");
        assert_eq!(s.to_string(), "limited:3");
    }
}
