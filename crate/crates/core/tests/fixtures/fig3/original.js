const express = require('express');
const fs = require('fs');
express().post('/path', (req, res) => {
    var options = {
        dotfiles: fs.ReadFileSync('cfg')
    };
    res.sendFile(req.params.name, options);
});
