//! Question-section decoding for DNS query payloads (RFC 1035 wire format).

const HEADER_LEN: usize = 12;
const MAX_LABEL: usize = 63;
const MAX_NAME: usize = 253;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsQuestion {
    /// Lowercased, dot-joined labels.
    pub name: String,
    pub query_type: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DnsError {
    #[error("payload of {0} bytes is shorter than the 12-byte DNS header")]
    TooShort(usize),
    #[error("question {0} runs past the end of the payload")]
    Truncated(usize),
    #[error("compression pointer in question {0}")]
    CompressionPointer(usize),
    #[error("reserved label type 0x{1:02x} in question {0}")]
    BadLabelType(usize, u8),
    #[error("name in question {0} exceeds 253 bytes")]
    NameTooLong(usize),
}

/// Decode every question in a DNS message. Root-name questions carry no
/// domain and are skipped.
pub fn decode_dns_queries(payload: &[u8]) -> Result<Vec<DnsQuestion>, DnsError> {
    if payload.len() < HEADER_LEN {
        return Err(DnsError::TooShort(payload.len()));
    }
    let qdcount = usize::from(u16::from_be_bytes([payload[4], payload[5]]));
    let mut pos = HEADER_LEN;
    let mut out = Vec::new();
    for q in 0..qdcount {
        let mut labels: Vec<String> = Vec::new();
        let mut name_len = 0usize;
        loop {
            let len_byte = *payload.get(pos).ok_or(DnsError::Truncated(q))?;
            pos += 1;
            match len_byte & 0xc0 {
                0x00 => {}
                0xc0 => return Err(DnsError::CompressionPointer(q)),
                other => return Err(DnsError::BadLabelType(q, other)),
            }
            let len = usize::from(len_byte);
            if len == 0 {
                break;
            }
            debug_assert!(len <= MAX_LABEL);
            let label = payload.get(pos..pos + len).ok_or(DnsError::Truncated(q))?;
            pos += len;
            name_len += len + usize::from(!labels.is_empty());
            if name_len > MAX_NAME {
                return Err(DnsError::NameTooLong(q));
            }
            labels.push(String::from_utf8_lossy(&label.to_ascii_lowercase()).into_owned());
        }
        let fixed = payload.get(pos..pos + 4).ok_or(DnsError::Truncated(q))?;
        pos += 4;
        let query_type = u16::from_be_bytes([fixed[0], fixed[1]]);
        if !labels.is_empty() {
            out.push(DnsQuestion {
                name: labels.join("."),
                query_type,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) fn encode_query(id: u16, names: &[(&str, u16)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&id.to_be_bytes());
    out.extend_from_slice(&[0x01, 0x00]);
    out.extend_from_slice(&(names.len() as u16).to_be_bytes());
    out.extend_from_slice(&[0, 0, 0, 0, 0, 0]);
    for (name, qtype) in names {
        for label in name.split('.') {
            out.push(label.len() as u8);
            out.extend_from_slice(label.as_bytes());
        }
        out.push(0);
        out.extend_from_slice(&qtype.to_be_bytes());
        out.extend_from_slice(&[0, 1]);
    }
    out
}
