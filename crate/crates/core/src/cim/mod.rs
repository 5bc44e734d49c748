//! The mantissa MAC array and its hybrid dot-product driver.

pub mod array;
pub mod config;
pub mod hybrid;
pub mod mac;
pub mod signal;

pub use array::{column_counts, pseudo_and, pseudo_xor, store_weights, sub_add_bit_serial, WeightArray};
pub use config::{AdcReconstruction, MacroConfig};
pub use hybrid::{DotFlags, HybridDotResult};
pub use mac::{write_trace_csv, AnalogTrace, CycleTrace, MacroInstance};
pub use signal::{adc_thresholds, charge_share, flash_adc, gblb_voltage, ideal_shared_voltage, AdcOutput, Capacitors};
