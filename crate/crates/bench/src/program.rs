//! Straight-line programs of vector kernel calls over arrays of one length.
//!
//! A [`Program`] runs either eagerly, one library call at a time with each
//! call spread over the threads (the un-annotated baseline), or by capturing
//! every call in a [`Session`] and letting the runtime pipeline them.

use std::ops::Range;
use std::thread;

use splitann::{partition, Arg, LazyHandle, Session, Value};
use splitann_demolibs::vml::raw;
use splitann_demolibs::{arg, Array};

use crate::measure::{fnv1a, Workload};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Log1p,
    Exp,
    Erf,
    Sin,
    Cos,
    Asin,
    /// `out = a * scale + shift`
    Linear { scale: f64, shift: f64 },
}

impl Kernel {
    /// Name of the registered function.
    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Add => "vd_add",
            Kernel::Sub => "vd_sub",
            Kernel::Mul => "vd_mul",
            Kernel::Div => "vd_div",
            Kernel::Sqrt => "vd_sqrt",
            Kernel::Log1p => "vd_log1p",
            Kernel::Exp => "vd_exp",
            Kernel::Erf => "vd_erf",
            Kernel::Sin => "vd_sin",
            Kernel::Cos => "vd_cos",
            Kernel::Asin => "vd_asin",
            Kernel::Linear { .. } => "vd_linear",
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            Kernel::Add | Kernel::Sub | Kernel::Mul | Kernel::Div => 2,
            _ => 1,
        }
    }

    /// # Safety
    /// `ins` must hold `self.inputs()` pointers valid for `n` reads, `out`
    /// must be valid for `n` writes, and no other thread may touch those
    /// elements during the call.
    unsafe fn run(&self, n: usize, ins: &[*const f64], out: *mut f64) {
        match *self {
            Kernel::Add => raw::add(n, ins[0], ins[1], out),
            Kernel::Sub => raw::sub(n, ins[0], ins[1], out),
            Kernel::Mul => raw::mul(n, ins[0], ins[1], out),
            Kernel::Div => raw::div(n, ins[0], ins[1], out),
            Kernel::Sqrt => raw::sqrt(n, ins[0], out),
            Kernel::Log1p => raw::log1p(n, ins[0], out),
            Kernel::Exp => raw::exp(n, ins[0], out),
            Kernel::Erf => raw::erf(n, ins[0], out),
            Kernel::Sin => raw::sin(n, ins[0], out),
            Kernel::Cos => raw::cos(n, ins[0], out),
            Kernel::Asin => raw::asin(n, ins[0], out),
            Kernel::Linear { scale, shift } => raw::linear(n, ins[0], scale, shift, out),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Op {
    pub kernel: Kernel,
    pub inputs: Vec<usize>,
    pub out: usize,
}

/// Arrays are owned by the program and never shared, which is what makes
/// the eager path's unsynchronized pointer access sound.
pub struct Program {
    name: String,
    len: usize,
    arrays: Vec<Array>,
    names: Vec<String>,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    ops: Vec<Op>,
}

impl Program {
    pub fn new(name: impl Into<String>, len: usize) -> Self {
        Program {
            name: name.into(),
            len,
            arrays: Vec::new(),
            names: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            ops: Vec::new(),
        }
    }

    /// Adds an input array; panics unless it has the program's length.
    pub fn input(&mut self, name: &str, data: Vec<f64>) -> usize {
        assert_eq!(data.len(), self.len, "input `{name}` has the wrong length");
        self.inputs.push(self.arrays.len());
        self.push(name, Array::new(data))
    }

    pub fn temp(&mut self, name: &str) -> usize {
        self.push(name, Array::zeros(self.len))
    }

    /// A temporary whose final contents count towards the checksum.
    pub fn output(&mut self, name: &str) -> usize {
        let id = self.temp(name);
        self.outputs.push(id);
        id
    }

    fn push(&mut self, name: &str, a: Array) -> usize {
        self.arrays.push(a);
        self.names.push(name.to_string());
        self.arrays.len() - 1
    }

    pub fn op(&mut self, kernel: Kernel, inputs: &[usize], out: usize) {
        assert_eq!(inputs.len(), kernel.inputs(), "{} takes {} inputs", kernel.name(), kernel.inputs());
        assert!(!self.inputs.contains(&out), "inputs are never written");
        self.ops.push(Op { kernel, inputs: inputs.to_vec(), out });
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn array(&self, name: &str) -> Option<&Array> {
        self.names.iter().position(|n| n == name).map(|i| &self.arrays[i])
    }

    /// Bytes of input data the program reads.
    pub fn input_bytes(&self) -> usize {
        self.inputs.len() * self.len * std::mem::size_of::<f64>()
    }

    fn eager_op(&self, op: &Op, threads: usize) {
        let ins: Vec<usize> = op.inputs.iter().map(|&i| self.arrays[i].ptr() as usize).collect();
        let out = self.arrays[op.out].ptr() as usize;
        let run = |r: Range<usize>| {
            let ins: Vec<*const f64> = ins.iter().map(|&p| (p as *const f64).wrapping_add(r.start)).collect();
            // SAFETY: every array has `len` elements and belongs to this
            // program alone; worker ranges are disjoint, and an output that
            // aliases an input is read and written at the same index.
            unsafe { op.kernel.run(r.len(), &ins, (out as *mut f64).add(r.start)) }
        };
        let workers = threads.min(self.len).max(1);
        if workers == 1 {
            run(0..self.len);
            return;
        }
        thread::scope(|s| {
            for r in partition(self.len, workers) {
                let run = &run;
                s.spawn(move || run(r));
            }
        });
    }
}

impl Workload for Program {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn run_eager(&self, threads: usize) {
        for op in &self.ops {
            self.eager_op(op, threads);
        }
    }

    fn capture(&self, s: &mut Session) -> Result<Vec<LazyHandle>, splitann::Error> {
        let size = Value::new(self.len as i64);
        for op in &self.ops {
            let mut args = vec![Arg::Value(size.clone())];
            args.extend(op.inputs.iter().map(|&i| arg(&self.arrays[i])));
            if let Kernel::Linear { scale, shift } = op.kernel {
                args.push(Arg::Value(Value::new(scale)));
                args.push(Arg::Value(Value::new(shift)));
            }
            args.push(arg(&self.arrays[op.out]));
            s.call(op.kernel.name(), args)?;
        }
        Ok(Vec::new())
    }

    fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for &o in &self.outputs {
            self.arrays[o].read(|xs| bytes.extend(xs.iter().flat_map(|x| x.to_bits().to_le_bytes())));
        }
        fnv1a(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Program {
        let mut p = Program::new("tiny", 10);
        let a = p.input("a", (0..10).map(f64::from).collect());
        let b = p.input("b", vec![2.0; 10]);
        let t = p.temp("t");
        let o = p.output("o");
        p.op(Kernel::Mul, &[a, b], t);
        p.op(Kernel::Linear { scale: 1.0, shift: 1.0 }, &[t], t);
        p.op(Kernel::Sqrt, &[t], o);
        p
    }

    #[test]
    fn eager_threads_agree() {
        let p = tiny();
        p.run_eager(1);
        let one = p.array("o").unwrap().to_vec();
        assert_eq!(one, (0..10).map(|i| f64::from(2 * i + 1).sqrt()).collect::<Vec<_>>());
        let sum = p.checksum();
        p.run_eager(4);
        assert_eq!(p.checksum(), sum);
        p.run_eager(32);
        assert_eq!(p.checksum(), sum);
    }

    #[test]
    #[should_panic(expected = "inputs are never written")]
    fn inputs_stay_read_only() {
        let mut p = tiny();
        p.op(Kernel::Sqrt, &[0], 1);
    }
}
