//! Boolean circuits over XOR / AND / NOT, evaluated layer by layer so that all
//! AND gates at one multiplicative depth share a single communication round.
//!
//! Circuits are built through [`CircuitBuilder`], which folds public constants
//! away. Comparing against a public value therefore costs fewer AND gates than
//! comparing two secret values, with no special-casing in the comparator.

use crate::error::{Error, Result};

/// Index of a wire: inputs come first, then one wire per gate.
pub type Wire = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Xor(Wire, Wire),
    And(Wire, Wire),
    Not(Wire),
}

/// A symbolic bit during construction: a public constant or a wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bit {
    Const(bool),
    Wire(Wire),
}

#[derive(Debug, Default)]
pub struct CircuitBuilder {
    num_inputs: usize,
    gates: Vec<Gate>,
}

impl CircuitBuilder {
    pub fn new(num_inputs: usize) -> Self {
        CircuitBuilder {
            num_inputs,
            gates: Vec::new(),
        }
    }

    pub fn input(&self, index: usize) -> Bit {
        assert!(index < self.num_inputs, "input {index} out of range");
        Bit::Wire(index)
    }

    pub fn inputs(&self, range: std::ops::Range<usize>) -> Vec<Bit> {
        range.map(|i| self.input(i)).collect()
    }

    fn push(&mut self, gate: Gate) -> Bit {
        self.gates.push(gate);
        Bit::Wire(self.num_inputs + self.gates.len() - 1)
    }

    pub fn xor(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Const(x), Bit::Const(y)) => Bit::Const(x ^ y),
            (Bit::Const(false), w) | (w, Bit::Const(false)) => w,
            (Bit::Const(true), w) | (w, Bit::Const(true)) => self.not(w),
            (Bit::Wire(x), Bit::Wire(y)) if x == y => Bit::Const(false),
            (Bit::Wire(x), Bit::Wire(y)) => self.push(Gate::Xor(x, y)),
        }
    }

    pub fn and(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Const(x), Bit::Const(y)) => Bit::Const(x & y),
            (Bit::Const(false), _) | (_, Bit::Const(false)) => Bit::Const(false),
            (Bit::Const(true), w) | (w, Bit::Const(true)) => w,
            (Bit::Wire(x), Bit::Wire(y)) if x == y => a,
            (Bit::Wire(x), Bit::Wire(y)) => self.push(Gate::And(x, y)),
        }
    }

    pub fn not(&mut self, a: Bit) -> Bit {
        match a {
            Bit::Const(x) => Bit::Const(!x),
            Bit::Wire(w) => {
                if let Some(Gate::Not(inner)) = w.checked_sub(self.num_inputs).map(|g| self.gates[g]) {
                    return Bit::Wire(inner);
                }
                self.push(Gate::Not(w))
            }
        }
    }

    pub fn or(&mut self, a: Bit, b: Bit) -> Bit {
        let x = self.xor(a, b);
        let y = self.and(a, b);
        self.xor(x, y)
    }

    /// Finalizes the circuit. Constant outputs are materialized from input 0.
    pub fn finish(mut self, outputs: &[Bit]) -> Circuit {
        assert!(self.num_inputs > 0, "a circuit needs at least one input");
        let outputs = outputs
            .iter()
            .map(|&bit| match bit {
                Bit::Wire(w) => w,
                Bit::Const(value) => {
                    let zero = self.push(Gate::Xor(0, 0));
                    match (value, zero) {
                        (false, Bit::Wire(w)) => w,
                        (true, z) => match self.not(z) {
                            Bit::Wire(w) => w,
                            Bit::Const(_) => unreachable!(),
                        },
                        _ => unreachable!(),
                    }
                }
            })
            .collect();
        Circuit::new(self.num_inputs, self.gates, outputs)
    }
}

/// One multiplicative layer of a schedule: the AND gates evaluated together
/// in one round, then the linear gates that depend on them.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Layer {
    pub ands: Vec<usize>,
    pub linear: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Circuit {
    num_inputs: usize,
    gates: Vec<Gate>,
    outputs: Vec<Wire>,
    layers: Vec<Layer>,
}

impl Circuit {
    fn new(num_inputs: usize, gates: Vec<Gate>, outputs: Vec<Wire>) -> Self {
        let mut depth = vec![0usize; num_inputs + gates.len()];
        let mut layers: Vec<Layer> = vec![Layer::default()];
        for (g, gate) in gates.iter().enumerate() {
            let w = num_inputs + g;
            let d = match *gate {
                Gate::Xor(a, b) => depth[a].max(depth[b]),
                Gate::Not(a) => depth[a],
                Gate::And(a, b) => depth[a].max(depth[b]) + 1,
            };
            depth[w] = d;
            if layers.len() <= d {
                layers.resize(d + 1, Layer::default());
            }
            match gate {
                Gate::And(..) => layers[d].ands.push(g),
                _ => layers[d].linear.push(g),
            }
        }
        Circuit {
            num_inputs,
            gates,
            outputs,
            layers,
        }
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_wires(&self) -> usize {
        self.num_inputs + self.gates.len()
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn outputs(&self) -> &[Wire] {
        &self.outputs
    }

    /// Layer 0 holds only linear gates; layer `k >= 1` holds the AND gates of depth `k`.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn and_count(&self) -> usize {
        self.gates.iter().filter(|g| matches!(g, Gate::And(..))).count()
    }

    /// Multiplicative depth, equal to the number of interactive rounds.
    pub fn and_depth(&self) -> usize {
        self.layers.iter().skip(1).filter(|l| !l.ands.is_empty()).count()
    }

    /// AND gate count per interactive layer, in evaluation order.
    pub fn ands_per_layer(&self) -> Vec<usize> {
        self.layers
            .iter()
            .skip(1)
            .map(|l| l.ands.len())
            .filter(|&n| n > 0)
            .collect()
    }

    /// Plaintext evaluation on one input assignment.
    pub fn eval(&self, inputs: &[bool]) -> Result<Vec<bool>> {
        if inputs.len() != self.num_inputs {
            return Err(Error::Shape(format!(
                "circuit takes {} inputs, got {}",
                self.num_inputs,
                inputs.len()
            )));
        }
        let mut wires = inputs.to_vec();
        wires.reserve(self.gates.len());
        for gate in &self.gates {
            let v = match *gate {
                Gate::Xor(a, b) => wires[a] ^ wires[b],
                Gate::And(a, b) => wires[a] & wires[b],
                Gate::Not(a) => !wires[a],
            };
            wires.push(v);
        }
        Ok(self.outputs.iter().map(|&w| wires[w]).collect())
    }
}

/// Least-significant-bit-first decomposition of a public constant.
pub fn constant_bits(value: u64, width: u32) -> Vec<Bit> {
    (0..width).map(|i| Bit::Const((value >> i) & 1 == 1)).collect()
}

/// Ripple-carry addition modulo `2^width`; the carry out of the top bit is dropped.
pub fn ripple_add(b: &mut CircuitBuilder, x: &[Bit], y: &[Bit]) -> Vec<Bit> {
    assert_eq!(x.len(), y.len(), "adder operands differ in width");
    let mut carry = Bit::Const(false);
    let mut sum = Vec::with_capacity(x.len());
    for (k, (&xk, &yk)) in x.iter().zip(y).enumerate() {
        let t = b.xor(xk, yk);
        sum.push(b.xor(t, carry));
        if k + 1 < x.len() {
            // carry' = carry ^ ((x ^ carry) & (y ^ carry)) = MAJ(x, y, carry)
            let xc = b.xor(xk, carry);
            let yc = b.xor(yk, carry);
            let both = b.and(xc, yc);
            carry = b.xor(carry, both);
        }
    }
    sum
}

/// `[x < y]` for unsigned operands, scanning from the least significant bit:
/// `lt' = lt ^ ((x_k ^ y_k) & (lt ^ y_k))`, one AND per bit.
pub fn less_than(b: &mut CircuitBuilder, x: &[Bit], y: &[Bit]) -> Bit {
    assert_eq!(x.len(), y.len(), "comparator operands differ in width");
    let mut lt = Bit::Const(false);
    for (&xk, &yk) in x.iter().zip(y) {
        let differ = b.xor(xk, yk);
        let pick = b.xor(lt, yk);
        let flip = b.and(differ, pick);
        lt = b.xor(lt, flip);
    }
    lt
}

/// Circuit computing `[x < y]` for two `m`-bit unsigned integers.
/// Inputs are the bits of `x` then the bits of `y`, least significant first.
#[derive(Clone, Debug)]
pub struct ComparisonCircuit {
    bits: u32,
    circuit: Circuit,
}

impl ComparisonCircuit {
    pub fn new(bits: u32) -> Self {
        let m = bits as usize;
        let mut b = CircuitBuilder::new(2 * m);
        let x = b.inputs(0..m);
        let y = b.inputs(m..2 * m);
        let out = less_than(&mut b, &x, &y);
        ComparisonCircuit {
            bits,
            circuit: b.finish(&[out]),
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }

    pub fn and_count(&self) -> usize {
        self.circuit.and_count()
    }

    /// Plaintext evaluation on integers.
    pub fn eval_plain(&self, x: u64, y: u64) -> bool {
        let m = self.bits as usize;
        let inputs: Vec<bool> = (0..m).map(|i| (x >> i) & 1 == 1).chain((0..m).map(|i| (y >> i) & 1 == 1)).collect();
        self.circuit.eval(&inputs).expect("input width matches")[0]
    }
}

/// Sums the per-party bit vectors `inputs[p]` with chained ripple-carry adders.
fn add_party_inputs(b: &mut CircuitBuilder, bits: usize, parties: usize, offset: usize) -> Vec<Bit> {
    let mut acc = b.inputs(offset..offset + bits);
    for p in 1..parties {
        let next = b.inputs(offset + p * bits..offset + (p + 1) * bits);
        acc = ripple_add(b, &acc, &next);
    }
    acc
}

/// Arithmetic-to-boolean conversion: inputs are each party's share bits
/// (party `p` owns inputs `p*m..(p+1)*m`); outputs are the `m` bits of the sum.
pub fn a2b_circuit(bits: u32, parties: usize) -> Circuit {
    let m = bits as usize;
    let mut b = CircuitBuilder::new(m * parties);
    let sum = add_party_inputs(&mut b, m, parties, 0);
    b.finish(&sum)
}

/// `[x < y]` on arithmetically shared operands: the share bits of `x` for all
/// parties, then those of `y`, are summed and compared.
pub fn cmp_circuit(bits: u32, parties: usize) -> Circuit {
    let m = bits as usize;
    let mut b = CircuitBuilder::new(2 * m * parties);
    let x = add_party_inputs(&mut b, m, parties, 0);
    let y = add_party_inputs(&mut b, m, parties, m * parties);
    let out = less_than(&mut b, &x, &y);
    b.finish(&[out])
}

/// `[x <= ⌊M/2⌋] = 1 - [⌊M/2⌋ < x]` on an arithmetically shared `x`, with the
/// constant's bits folded in publicly.
pub fn half_circuit(bits: u32, parties: usize) -> Circuit {
    let m = bits as usize;
    let mut b = CircuitBuilder::new(m * parties);
    let x = add_party_inputs(&mut b, m, parties, 0);
    let half = constant_bits(1u64 << (bits - 1), bits);
    let above = less_than(&mut b, &half, &x);
    let out = b.not(above);
    b.finish(&[out])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_bits(v: u64, m: u32) -> Vec<bool> {
        (0..m).map(|i| (v >> i) & 1 == 1).collect()
    }

    fn from_bits(bits: &[bool]) -> u64 {
        bits.iter().enumerate().fold(0, |acc, (i, &b)| acc | ((b as u64) << i))
    }

    #[test]
    fn comparison_exhaustive_m8() {
        let c = ComparisonCircuit::new(8);
        for x in 0u64..256 {
            for y in 0u64..256 {
                assert_eq!(c.eval_plain(x, y), x < y, "{x} < {y}");
            }
        }
        assert_eq!(c.and_count(), 8);
        assert_eq!(c.circuit().and_depth(), 8);
    }

    #[test]
    fn adder_exhaustive_m8() {
        let circuit = a2b_circuit(8, 2);
        assert_eq!(circuit.and_count(), 7);
        assert_eq!(circuit.and_depth(), 7);
        for x in 0u64..256 {
            for y in 0u64..256 {
                let mut input = to_bits(x, 8);
                input.extend(to_bits(y, 8));
                assert_eq!(from_bits(&circuit.eval(&input).unwrap()), (x + y) & 0xff);
            }
        }
    }

    #[test]
    fn three_party_adder() {
        let circuit = a2b_circuit(8, 3);
        for (x, y, z) in [(1u64, 2u64, 3u64), (255, 255, 255), (128, 128, 0), (17, 200, 99)] {
            let mut input = to_bits(x, 8);
            input.extend(to_bits(y, 8));
            input.extend(to_bits(z, 8));
            assert_eq!(from_bits(&circuit.eval(&input).unwrap()), (x + y + z) & 0xff);
        }
    }

    #[test]
    fn half_circuit_exhaustive_m8() {
        let circuit = half_circuit(8, 2);
        // Folding the constant leaves m - 1 ANDs for the comparison.
        assert_eq!(circuit.and_count(), 2 * 7);
        assert_eq!(circuit.and_depth(), 8);
        for x0 in 0u64..256 {
            for x1 in [0u64, 1, 77, 128, 255] {
                let x = (x0 + x1) & 0xff;
                let mut input = to_bits(x0, 8);
                input.extend(to_bits(x1, 8));
                assert_eq!(circuit.eval(&input).unwrap()[0], x <= 128, "x = {x}");
            }
        }
    }

    #[test]
    fn cmp_circuit_samples_m8() {
        let circuit = cmp_circuit(8, 2);
        assert_eq!(circuit.and_count(), 2 * 7 + 8);
        assert_eq!(circuit.and_depth(), 8);
        for (x0, x1, y0, y1) in [(3u64, 250u64, 1u64, 1u64), (0, 0, 0, 0), (200, 100, 44, 0), (255, 1, 0, 1)] {
            let (x, y) = ((x0 + x1) & 0xff, (y0 + y1) & 0xff);
            let input: Vec<bool> = [x0, x1, y0, y1].iter().flat_map(|&v| to_bits(v, 8)).collect();
            assert_eq!(circuit.eval(&input).unwrap()[0], x < y);
        }
    }

    #[test]
    fn layers_respect_dependencies() {
        let circuit = half_circuit(16, 2);
        let mut level = vec![usize::MAX; circuit.num_wires()];
        for w in 0..circuit.num_inputs() {
            level[w] = 0;
        }
        for (d, layer) in circuit.layers().iter().enumerate() {
            for &g in layer.ands.iter().chain(&layer.linear) {
                level[circuit.num_inputs() + g] = d;
            }
        }
        for (g, gate) in circuit.gates().iter().enumerate() {
            let me = level[circuit.num_inputs() + g];
            match *gate {
                Gate::And(a, b) => assert!(level[a] < me && level[b] < me),
                Gate::Xor(a, b) => assert!(level[a] <= me && level[b] <= me),
                Gate::Not(a) => assert!(level[a] <= me),
            }
        }
        assert_eq!(circuit.ands_per_layer().iter().sum::<usize>(), circuit.and_count());
    }

    #[test]
    fn constant_folding() {
        let mut b = CircuitBuilder::new(1);
        let x = b.input(0);
        assert_eq!(b.and(x, Bit::Const(false)), Bit::Const(false));
        assert_eq!(b.and(x, Bit::Const(true)), x);
        assert_eq!(b.xor(x, x), Bit::Const(false));
        let nx = b.not(x);
        assert_eq!(b.not(nx), x);
        let c = b.finish(&[Bit::Const(true), Bit::Const(false), x]);
        assert_eq!(c.eval(&[true]).unwrap(), vec![true, false, true]);
        assert_eq!(c.eval(&[false]).unwrap(), vec![true, false, false]);
    }
}
