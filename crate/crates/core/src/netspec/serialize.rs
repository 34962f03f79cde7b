//! Canonical text output: 2-space indent, one key per line, LF endings.

use std::fmt::Write;

use super::net::{LayerParams, LayerSpec, NetSpec};

pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub fn serialize_net(spec: &NetSpec) -> String {
    let mut out = String::new();
    if !spec.name.is_empty() {
        writeln!(out, "name: {}", quote(&spec.name)).unwrap();
    }
    for input in &spec.inputs {
        writeln!(out, "input: {}", quote(input)).unwrap();
    }
    for layer in &spec.layers {
        write_layer(&mut out, layer);
    }
    out
}

fn write_layer(out: &mut String, layer: &LayerSpec) {
    out.push_str("layer {\n");
    writeln!(out, "  name: {}", quote(&layer.name)).unwrap();
    writeln!(out, "  type: {}", quote(layer.kind.as_str())).unwrap();
    for b in &layer.bottoms {
        writeln!(out, "  bottom: {}", quote(b)).unwrap();
    }
    for t in &layer.tops {
        writeln!(out, "  top: {}", quote(t)).unwrap();
    }
    let mut fields: Vec<(&str, String)> = Vec::new();
    let block = match &layer.params {
        LayerParams::None => None,
        LayerParams::Data(p) => {
            if let Some(s) = &p.source {
                fields.push(("source", quote(s)));
            }
            if let Some(b) = p.batch_size {
                fields.push(("batch_size", b.to_string()));
            }
            Some("data_param")
        }
        LayerParams::Convolution(p) => {
            fields.push(("num_output", p.num_output.to_string()));
            fields.push(("kernel_size", p.kernel_size.to_string()));
            if let Some(s) = p.stride {
                fields.push(("stride", s.to_string()));
            }
            if let Some(s) = p.pad {
                fields.push(("pad", s.to_string()));
            }
            Some("convolution_param")
        }
        LayerParams::Pooling(p) => {
            if let Some(m) = p.pool {
                fields.push(("pool", m.as_str().to_string()));
            }
            fields.push(("kernel_size", p.kernel_size.to_string()));
            if let Some(s) = p.stride {
                fields.push(("stride", s.to_string()));
            }
            if let Some(s) = p.pad {
                fields.push(("pad", s.to_string()));
            }
            Some("pooling_param")
        }
        LayerParams::InnerProduct(p) => {
            fields.push(("num_output", p.num_output.to_string()));
            Some("inner_product_param")
        }
    };
    if let Some(block) = block.filter(|_| !fields.is_empty()) {
        writeln!(out, "  {block} {{").unwrap();
        for (k, v) in fields {
            writeln!(out, "    {k}: {v}").unwrap();
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
}
